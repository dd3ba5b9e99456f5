#include "stepsearch/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace stepsearch {

namespace {

const std::vector<std::string>& finance_step_names() {
  static const std::vector<std::string> names = {
      "Summary",          "Historical context",        "Valuation",
      "Market size and dominance", "Strategic initiatives", "Investor sentiment",
      "Risks and concerns", "Recent performance",      "Consolidation",
      "Overall impact"};
  return names;
}

const std::vector<std::string>& legal_step_names() {
  static const std::vector<std::string> names = {"Summary", "Reasoning", "Evidence",
                                                 "Conclusion"};
  return names;
}

std::vector<std::string> build_vocabulary(const std::vector<std::string>& names) {
  std::vector<std::string> vocab;
  vocab.reserve(names.size() * 2);
  for (const std::string& name : names) {
    vocab.push_back(StepSchema::open_tag(name));
    vocab.push_back(StepSchema::close_tag(name));
  }
  return vocab;
}

std::string trim_copy(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

struct TagOccurrence {
  std::size_t pos;
  const std::string* tag;
};

std::vector<TagOccurrence> find_tags(const std::string& text) {
  std::vector<TagOccurrence> occs;
  for (const std::string& tag : full_token_vocabulary()) {
    std::size_t pos = text.find(tag);
    while (pos != std::string::npos) {
      occs.push_back(TagOccurrence{pos, &tag});
      pos = text.find(tag, pos + 1);
    }
  }
  std::sort(occs.begin(), occs.end(),
            [](const TagOccurrence& a, const TagOccurrence& b) { return a.pos < b.pos; });
  return occs;
}

// First non-whitespace byte in [from, to), or npos.
std::size_t first_nonspace(const std::string& text, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) {
    if (!std::isspace(static_cast<unsigned char>(text[i]))) return i;
  }
  return std::string::npos;
}

}  // namespace

std::string StepSchema::tag_name(const std::string& step_name) {
  std::string out;
  for (char c : step_name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::string StepSchema::open_tag(const std::string& step_name) {
  return "<" + tag_name(step_name) + ">";
}

std::string StepSchema::close_tag(const std::string& step_name) {
  return "</" + tag_name(step_name) + ">";
}

StepSchema StepSchema::finance() {
  StepSchema s;
  s.domain = Domain::finance;
  s.step_names = finance_step_names();
  s.token_vocabulary = build_vocabulary(s.step_names);
  return s;
}

StepSchema StepSchema::legal() {
  StepSchema s;
  s.domain = Domain::legal;
  s.step_names = legal_step_names();
  s.token_vocabulary = build_vocabulary(s.step_names);
  return s;
}

const std::vector<std::string>& full_token_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> all;
    std::unordered_set<std::string> seen;
    for (const auto& names : {finance_step_names(), legal_step_names()}) {
      for (const std::string& name : names) {
        for (const std::string& tag :
             {StepSchema::open_tag(name), StepSchema::close_tag(name)}) {
          if (seen.insert(tag).second) all.push_back(tag);
        }
      }
    }
    if (all.size() != 26) {
      throw Error(ErrorCode::ConfigError, "tag vocabulary must have 26 entries, has " +
                                              std::to_string(all.size()));
    }
    return all;
  }();
  return vocab;
}

ValidationResult validate_structure(const std::string& tagged_response,
                                    const StepSchema& schema) {
  const std::vector<TagOccurrence> occs = find_tags(tagged_response);
  ValidationResult r;
  auto fail = [&r](std::size_t pos, std::string msg) {
    r.valid = false;
    r.error = std::move(msg);
    r.error_pos = pos;
  };

  std::size_t occ = 0;
  std::size_t cursor = 0;
  for (const std::string& name : schema.step_names) {
    const std::string open = StepSchema::open_tag(name);
    const std::string close = StepSchema::close_tag(name);
    if (occ >= occs.size()) {
      fail(tagged_response.size(), "missing section " + open);
      return r;
    }
    if (*occs[occ].tag != open) {
      fail(occs[occ].pos, "expected " + open + " but found " + *occs[occ].tag);
      return r;
    }
    const std::size_t stray = first_nonspace(tagged_response, cursor, occs[occ].pos);
    if (stray != std::string::npos) {
      fail(stray, "text outside sections before " + open);
      return r;
    }
    const std::size_t body_start = occs[occ].pos + open.size();
    ++occ;
    if (occ >= occs.size()) {
      fail(tagged_response.size(), "unclosed " + open);
      return r;
    }
    if (*occs[occ].tag != close) {
      fail(occs[occ].pos, "expected " + close + " but found " + *occs[occ].tag);
      return r;
    }
    if (first_nonspace(tagged_response, body_start, occs[occ].pos) == std::string::npos) {
      fail(body_start, "empty body in " + open);
      return r;
    }
    cursor = occs[occ].pos + close.size();
    ++occ;
  }
  if (occ < occs.size()) {
    fail(occs[occ].pos, "unexpected tag " + *occs[occ].tag + " after last section");
    return r;
  }
  const std::size_t stray = first_nonspace(tagged_response, cursor, tagged_response.size());
  if (stray != std::string::npos) {
    fail(stray, "text outside sections after last close tag");
    return r;
  }
  return r;
}

std::string strip_tokens(const std::string& tagged_response, const StepSchema& schema) {
  bool has_tag = false;
  for (const std::string& tag : full_token_vocabulary()) {
    if (tagged_response.find(tag) != std::string::npos) {
      has_tag = true;
      break;
    }
  }
  if (!has_tag) return tagged_response;  // already stripped; fixed point

  if (validate_structure(tagged_response, schema).valid) {
    std::vector<std::string> bodies;
    std::size_t cursor = 0;
    for (const std::string& name : schema.step_names) {
      const std::string open = StepSchema::open_tag(name);
      const std::string close = StepSchema::close_tag(name);
      const std::size_t o = tagged_response.find(open, cursor);
      const std::size_t c = tagged_response.find(close, o + open.size());
      bodies.push_back(
          trim_copy(tagged_response.substr(o + open.size(), c - o - open.size())));
      cursor = c + close.size();
    }
    return join_steps(bodies, "\n\n");
  }

  // Malformed tagged input: best effort. Drop every tag, then squeeze the
  // blank-line runs the removals leave behind.
  std::string s = tagged_response;
  for (const std::string& tag : full_token_vocabulary()) {
    std::size_t pos = s.find(tag);
    while (pos != std::string::npos) {
      s.erase(pos, tag.size());
      pos = s.find(tag, pos);
    }
  }
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[i]))) {
      std::size_t j = i;
      int newlines = 0;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) {
        if (s[j] == '\n') ++newlines;
        ++j;
      }
      out += newlines >= 2 ? "\n\n" : s.substr(i, j - i);
      i = j;
    } else {
      out.push_back(s[i++]);
    }
  }
  return trim_copy(out);
}

std::string render_teacher_prompt(const Question& question, const StepSchema& schema,
                                  const std::string& template_file) {
  std::ifstream in(template_file);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open template " + template_file);
  }
  const std::string tpl((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::string steps;
  for (std::size_t i = 0; i < schema.step_names.size(); ++i) {
    const std::string& name = schema.step_names[i];
    steps += std::to_string(i + 1) + ". " + name + " - write this section between " +
             StepSchema::open_tag(name) + " and " + StepSchema::close_tag(name) + "\n";
  }

  // The template itself must introduce each step exactly once; checked with
  // the question blanked out so question wording cannot trip the assertion.
  const std::string skeleton = render_template(tpl, {{"question", ""}, {"steps", steps}});
  for (const std::string& name : schema.step_names) {
    int count = 0;
    std::size_t pos = skeleton.find(name);
    while (pos != std::string::npos) {
      const bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(skeleton[pos - 1]));
      const std::size_t end = pos + name.size();
      const bool right_ok =
          end >= skeleton.size() || !std::isalnum(static_cast<unsigned char>(skeleton[end]));
      if (left_ok && right_ok) ++count;
      pos = skeleton.find(name, pos + 1);
    }
    if (count != 1) {
      throw Error(ErrorCode::TemplateError, "step name '" + name + "' appears " +
                                                std::to_string(count) +
                                                " times in the rendered template");
    }
  }
  return render_template(tpl, {{"question", question.prompt_text}, {"steps", steps}});
}

void to_json(json& j, const CotRecord& r) {
  json jq;
  to_json(jq, r.question);
  j = json{{"question", std::move(jq)},
           {"tagged_response", r.tagged_response},
           {"stripped_response", r.stripped_response},
           {"teacher_model", r.teacher_model},
           {"valid", r.valid}};
}

void from_json(const json& j, CotRecord& r) {
  from_json(j.at("question"), r.question);
  r.tagged_response = j.at("tagged_response").get<std::string>();
  r.stripped_response = j.at("stripped_response").get<std::string>();
  r.teacher_model = j.value("teacher_model", std::string());
  r.valid = j.value("valid", false);
}

std::vector<CotRecord> load_records_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open records file " + path);
  }
  std::vector<CotRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    try {
      CotRecord r;
      from_json(json::parse(line), r);
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidRecord,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_records_jsonl(const std::vector<CotRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write records file " + path);
  }
  for (const CotRecord& r : records) {
    json j;
    to_json(j, r);
    out << j.dump() << "\n";
  }
}

std::size_t export_sft(const std::vector<CotRecord>& records, const std::string& out_file) {
  std::string bad;
  for (const CotRecord& r : records) {
    if (!r.valid) {
      if (!bad.empty()) bad += ", ";
      bad += r.question.id;
    }
  }
  if (!bad.empty()) {
    throw Error(ErrorCode::InvalidRecord, "invalid records: " + bad);
  }
  const std::string tmp = out_file + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) {
      throw Error(ErrorCode::IoError, "cannot write " + tmp);
    }
    for (const CotRecord& r : records) {
      json j;
      j["instruction"] = r.question.prompt_text;
      j["input"] = "";
      j["output"] = r.stripped_response;
      out << j.dump() << "\n";
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, out_file, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot finalize " + out_file);
  }
  return records.size();
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["schema_domain"] = m.schema_domain;
  j["teacher_model"] = m.teacher_model;
  j["requested"] = m.requested;
  j["kept"] = m.kept;
  j["dropped"] = m.dropped;
  j["drop_reasons"] = m.drop_reasons;
  return j;
}

std::vector<CotRecord> build_records(PolicyBackend& teacher,
                                     const std::vector<Question>& questions,
                                     const StepSchema& schema, const std::string& template_file,
                                     DatasetManifest* manifest) {
  if (manifest) {
    manifest->schema_domain = to_string(schema.domain);
    manifest->teacher_model = teacher.name();
    manifest->requested = questions.size();
    manifest->kept = 0;
    manifest->dropped = 0;
    manifest->drop_reasons.clear();
  }
  std::vector<CotRecord> records;
  for (const Question& q : questions) {
    const std::string base_prompt = render_teacher_prompt(q, schema, template_file);
    std::string tagged;
    ValidationResult v;
    for (int attempt = 0; attempt < 2; ++attempt) {
      GenerationRequest req;
      req.prompt_text = attempt == 0
                            ? base_prompt
                            : base_prompt + "\n\nYour previous reply was rejected: " + v.error +
                                  "\nFollow the tag structure exactly.";
      req.max_tokens = 2048;
      req.temperature = 0.0;
      req.seed = static_cast<std::uint64_t>(attempt);
      req.want_logprobs = false;
      tagged = teacher.generate(req).text();
      v = validate_structure(tagged, schema);
      if (v.valid) break;
    }
    if (!v.valid) {
      std::fprintf(stderr, "dropping '%s': %s\n", q.id.c_str(), v.error.c_str());
      if (manifest) {
        ++manifest->dropped;
        manifest->drop_reasons.push_back(q.id + ": " + v.error);
      }
      continue;
    }
    CotRecord r;
    r.question = q;
    r.tagged_response = tagged;
    r.stripped_response = strip_tokens(tagged, schema);
    r.teacher_model = teacher.name();
    r.valid = true;
    records.push_back(std::move(r));
    if (manifest) ++manifest->kept;
  }
  return records;
}

}  // namespace stepsearch
