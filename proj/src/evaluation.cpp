#include "stepsearch/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <unordered_map>

namespace stepsearch {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Word-boundary check for a candidate match of `needle` at `pos` in
// `haystack` (both already lowercased). Boundary constraints apply only on
// sides where the needle itself starts/ends with a word character.
bool boundary_ok(const std::string& haystack, std::size_t pos, const std::string& needle) {
  if (needle.empty()) return false;
  if (word_char(needle.front()) && pos > 0 && word_char(haystack[pos - 1])) return false;
  const std::size_t end = pos + needle.size();
  if (word_char(needle.back()) && end < haystack.size() && word_char(haystack[end])) return false;
  return true;
}

std::size_t find_word(const std::string& haystack, const std::string& needle, std::size_t from) {
  std::size_t pos = haystack.find(needle, from);
  while (pos != std::string::npos) {
    if (boundary_ok(haystack, pos, needle)) return pos;
    pos = haystack.find(needle, pos + 1);
  }
  return std::string::npos;
}

// Earliest word-boundary occurrence of any answer-space member in `text`
// (lowercased); position ties go to the longer member. Returns the index into
// `space`, or -1.
int first_member_match(const std::string& low_text, const std::vector<std::string>& space) {
  int best = -1;
  std::size_t best_pos = std::string::npos;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const std::string m = lower(space[i]);
    const std::size_t pos = find_word(low_text, m, 0);
    if (pos == std::string::npos) continue;
    if (pos < best_pos || (pos == best_pos && m.size() > best_len)) {
      best = static_cast<int>(i);
      best_pos = pos;
      best_len = m.size();
    }
  }
  return best;
}

// Latest word-boundary occurrence; ties to the longer member.
int last_member_match(const std::string& low_text, const std::vector<std::string>& space) {
  int best = -1;
  std::size_t best_pos = 0;
  std::size_t best_len = 0;
  bool found = false;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const std::string m = lower(space[i]);
    std::size_t last = std::string::npos;
    std::size_t pos = find_word(low_text, m, 0);
    while (pos != std::string::npos) {
      last = pos;
      pos = find_word(low_text, m, pos + 1);
    }
    if (last == std::string::npos) continue;
    if (!found || last > best_pos || (last == best_pos && m.size() > best_len)) {
      best = static_cast<int>(i);
      best_pos = last;
      best_len = m.size();
      found = true;
    }
  }
  return best;
}

const std::vector<std::string>& answer_markers() {
  static const std::vector<std::string> markers = {"answer:", "prediction:", "conclusion:"};
  return markers;
}

std::int64_t count_words(const std::string& text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

// --- ProofScore -------------------------------------------------------------

ProofScore ProofScore::from_components(double rc, double ds, double fa) {
  ProofScore p;
  p.rc = rc;
  p.ds = ds;
  p.fa = fa;
  p.mean = (rc + ds + fa) / 3.0;
  p.validate();
  return p;
}

ProofScore ProofScore::zero_override() {
  ProofScore p;
  p.overridden = true;
  return p;
}

void ProofScore::validate() const {
  if (overridden) {
    if (rc != 0.0 || ds != 0.0 || fa != 0.0 || mean != 0.0) {
      throw Error(ErrorCode::ConfigError, "overridden proof score must be all zero");
    }
    return;
  }
  for (double v : {rc, ds, fa}) {
    if (!(v >= 1.0 && v <= 7.0)) {
      throw Error(ErrorCode::ConfigError, "proof aspect scores must lie in [1,7]");
    }
  }
  if (mean != (rc + ds + fa) / 3.0) {
    throw Error(ErrorCode::ConfigError, "proof mean must equal (rc+ds+fa)/3");
  }
}

void to_json(json& j, const ProofScore& p) {
  j = json{{"rc", p.rc},       {"ds", p.ds},
           {"fa", p.fa},       {"mean", p.mean},
           {"overridden", p.overridden}};
  if (!p.raw_reply.empty()) j["raw_reply"] = p.raw_reply;
}

void from_json(const json& j, ProofScore& p) {
  p.rc = j.at("rc").get<double>();
  p.ds = j.at("ds").get<double>();
  p.fa = j.at("fa").get<double>();
  p.mean = j.at("mean").get<double>();
  p.overridden = j.value("overridden", false);
  p.raw_reply = j.value("raw_reply", std::string());
  p.validate();
}

// --- MCC --------------------------------------------------------------------

double mcc(const ConfusionCounts& c) {
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) {
    throw Error(ErrorCode::ConfigError, "confusion counts must be non-negative");
  }
  const double tp = static_cast<double>(c.tp);
  const double tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  const double m1 = tp + fp;
  const double m2 = tp + fn;
  const double m3 = tn + fp;
  const double m4 = tn + fn;
  if (m1 == 0.0 || m2 == 0.0 || m3 == 0.0 || m4 == 0.0) return 0.0;
  // Product of square roots, not the square root of the product: the latter
  // can overflow a double for large counts.
  return (tp * tn - fp * fn) /
         (std::sqrt(m1) * std::sqrt(m2) * std::sqrt(m3) * std::sqrt(m4));
}

// --- answer extraction ------------------------------------------------------

std::optional<std::string> extract_answer(const std::string& response_text,
                                          const std::vector<std::string>& answer_space) {
  if (answer_space.empty()) return std::nullopt;
  const std::string low = lower(response_text);

  // 1) Segment after the last verdict marker.
  std::size_t seg_start = std::string::npos;
  for (const std::string& marker : answer_markers()) {
    const std::size_t pos = low.rfind(marker);
    if (pos == std::string::npos) continue;
    const std::size_t after = pos + marker.size();
    if (seg_start == std::string::npos || after > seg_start) seg_start = after;
  }
  if (seg_start != std::string::npos) {
    const int hit = first_member_match(low.substr(seg_start), answer_space);
    if (hit >= 0) return answer_space[hit];
  }

  // 2) First parenthesized option, e.g. "(b)".
  std::size_t open = low.find('(');
  while (open != std::string::npos) {
    const std::size_t close = low.find(')', open + 1);
    if (close == std::string::npos) break;
    const std::string inner = trim(low.substr(open + 1, close - open - 1));
    for (const std::string& member : answer_space) {
      if (inner == lower(member)) return member;
    }
    open = low.find('(', open + 1);
  }

  // 3) Last bare occurrence anywhere.
  const int hit = last_member_match(low, answer_space);
  if (hit >= 0) return answer_space[hit];
  return std::nullopt;
}

std::optional<std::string> extract_answer_judge(const std::string& response_text,
                                                const std::vector<std::string>& answer_space,
                                                PolicyBackend& judge_backend,
                                                const std::string& extract_template) {
  if (answer_space.empty()) return std::nullopt;
  std::string options;
  for (std::size_t i = 0; i < answer_space.size(); ++i) {
    if (i) options += ", ";
    options += answer_space[i];
  }
  GenerationRequest req;
  req.prompt_text = render_template(
      extract_template, {{"response", response_text}, {"options", options}});
  req.max_tokens = 16;
  req.temperature = 0.0;
  req.seed = 0;
  req.want_logprobs = false;
  req.stop_sequences = {"\n"};
  GenerationResult res;
  try {
    res = judge_backend.generate(req);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TemplateError) throw;
    throw Error(ErrorCode::JudgeUnavailable,
                std::string("judge backend failed during extraction: ") + e.what());
  }
  const int hit = first_member_match(lower(res.text()), answer_space);
  if (hit >= 0) return answer_space[hit];
  return std::nullopt;
}

bool is_explanation_free(const std::string& response_text,
                         const std::vector<std::string>& answer_space) {
  std::string s = lower(trim(response_text));
  if (s.empty()) return true;
  for (const std::string& marker : answer_markers()) {
    if (s.rfind(marker, 0) == 0) {
      s = trim(s.substr(marker.size()));
      break;
    }
  }
  const std::string padding = "()[]{}.,:;!?\"'";
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && padding.find(s[b]) != std::string::npos) ++b;
  while (e > b && padding.find(s[e - 1]) != std::string::npos) --e;
  s = trim(s.substr(b, e - b));
  if (s.empty()) return true;
  for (const std::string& member : answer_space) {
    if (s == lower(member)) return true;
  }
  return false;
}

// --- judge reply parsing ----------------------------------------------------

namespace {

struct AspectKeywords {
  int slot;  // 0=rc 1=ds 2=fa
  std::vector<std::string> keywords;  // longest first
};

const std::vector<AspectKeywords>& aspect_keywords() {
  static const std::vector<AspectKeywords> table = {
      {0, {"reasoning completeness", "completeness", "coherence", "rc"}},
      {1, {"degree of safety", "safety", "ds"}},
      {2, {"factual accuracy", "factual", "accuracy", "fa"}},
  };
  return table;
}

// First integer at or after `from`; npos-safe. Returns -1 when none.
long first_int_from(const std::string& line, std::size_t from) {
  for (std::size_t i = from; i < line.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(line[i]))) continue;
    std::size_t end = i;
    while (end < line.size() && std::isdigit(static_cast<unsigned char>(line[end]))) ++end;
    return std::stol(line.substr(i, end - i));
  }
  return -1;
}

}  // namespace

std::optional<ProofScore> parse_judge_reply(const std::string& reply) {
  std::optional<long> slots[3];
  std::size_t line_start = 0;
  while (line_start <= reply.size()) {
    std::size_t line_end = reply.find('\n', line_start);
    if (line_end == std::string::npos) line_end = reply.size();
    const std::string line = reply.substr(line_start, line_end - line_start);
    line_start = line_end + 1;
    const std::string low = lower(line);

    // Which aspects does this line mention, and where?
    int aspects_present = 0;
    struct Hit {
      int slot;
      std::size_t after;
    };
    std::vector<Hit> hits;
    for (const AspectKeywords& a : aspect_keywords()) {
      for (const std::string& kw : a.keywords) {
        const std::size_t pos = find_word(low, kw, 0);
        if (pos != std::string::npos) {
          hits.push_back(Hit{a.slot, pos + kw.size()});
          ++aspects_present;
          break;
        }
      }
    }

    if (!hits.empty()) {
      for (const Hit& h : hits) {
        long value = first_int_from(low, h.after);
        // A lone aspect with its score written first ("6 (factual accuracy)")
        // is unambiguous; with several aspects on the line it is not.
        if (value < 0 && aspects_present == 1) value = first_int_from(low, 0);
        if (value >= 1 && value <= 7 && !slots[h.slot]) slots[h.slot] = value;
      }
    } else {
      // Bare numeric lines fill rc, ds, fa in order.
      const std::string t = trim(low);
      if (!t.empty() && std::isdigit(static_cast<unsigned char>(t[0]))) {
        std::size_t i = 0;
        for (int s = 0; s < 3 && i < t.size(); ++s) {
          while (i < t.size() && !std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
          if (i >= t.size()) break;
          std::size_t end = i;
          while (end < t.size() && std::isdigit(static_cast<unsigned char>(t[end]))) ++end;
          const long value = std::stol(t.substr(i, end - i));
          i = end;
          if (value >= 1 && value <= 7) {
            for (auto& slot : slots) {
              if (!slot) {
                slot = value;
                break;
              }
            }
          }
        }
      }
    }
    if (slots[0] && slots[1] && slots[2]) break;
  }
  if (!(slots[0] && slots[1] && slots[2])) return std::nullopt;
  return ProofScore::from_components(static_cast<double>(*slots[0]),
                                     static_cast<double>(*slots[1]),
                                     static_cast<double>(*slots[2]));
}

ProofScore proof_judge(const std::string& response_text, const Question& question,
                       PolicyBackend& judge_backend, const std::string& rubric_prompt) {
  if (is_explanation_free(response_text, question.answer_space)) {
    return ProofScore::zero_override();
  }
  const std::string prompt = render_template(
      rubric_prompt, {{"question", question.prompt_text}, {"response", response_text}});
  std::string last_reply;
  for (int attempt = 0; attempt < 2; ++attempt) {
    GenerationRequest req;
    req.prompt_text = prompt;
    req.max_tokens = 128;
    req.temperature = 0.0;
    req.seed = static_cast<std::uint64_t>(attempt);  // lets a sampling judge re-roll
    req.want_logprobs = false;
    GenerationResult res;
    try {
      res = judge_backend.generate(req);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::TemplateError) throw;
      throw Error(ErrorCode::JudgeUnavailable,
                  std::string("judge backend failed: ") + e.what());
    }
    last_reply = res.text();
    auto parsed = parse_judge_reply(last_reply);
    if (parsed) {
      parsed->raw_reply = last_reply;
      return *parsed;
    }
  }
  throw Error(ErrorCode::ParseError, "judge reply lacks three aspect scores: '" + last_reply + "'");
}

// --- aggregation ------------------------------------------------------------

EvalReport aggregate(const std::vector<SearchOutcome>& outcomes,
                     const std::vector<Question>& gold,
                     const std::map<std::string, ProofScore>* proofs) {
  std::unordered_map<std::string, const Question*> by_id;
  for (const Question& q : gold) by_id.emplace(q.id, &q);

  EvalReport report;
  bool binary_uniform = !outcomes.empty();
  const std::vector<std::string>* space = nullptr;
  ConfusionCounts counts;
  std::int64_t correct_count = 0;
  double time_sum = 0.0;
  double words_sum = 0.0;
  double proof_sum = 0.0;
  std::int64_t proof_n = 0;

  for (const SearchOutcome& outcome : outcomes) {
    const auto it = by_id.find(outcome.tree.root_question);
    if (it == by_id.end()) {
      throw Error(ErrorCode::MissingGold,
                  "no gold question for outcome '" + outcome.tree.root_question + "'");
    }
    const Question& q = *it->second;
    if (!q.gold_answer) {
      throw Error(ErrorCode::MissingGold, "question '" + q.id + "' has no gold answer");
    }

    PerQuestionEval e;
    e.question_id = q.id;
    e.extracted_answer = outcome.extracted_answer
                             ? outcome.extracted_answer
                             : extract_answer(outcome.final_text, q.answer_space);
    e.correct = e.extracted_answer && *e.extracted_answer == *q.gold_answer;
    if (proofs) {
      const auto pit = proofs->find(q.id);
      if (pit != proofs->end()) {
        e.proof = pit->second;
        proof_sum += pit->second.mean;
        ++proof_n;
      }
    }
    e.nodes_generated = outcome.tree.accounting.nodes_generated;
    e.wall_time_ms = outcome.tree.accounting.wall_time_ms;
    e.answer_length_words = count_words(outcome.final_text);

    if (q.answer_space.size() != 2) {
      binary_uniform = false;
    } else if (!space) {
      space = &q.answer_space;
    } else if (q.answer_space != *space) {
      binary_uniform = false;
    }
    if (q.answer_space.size() == 2) {
      const bool gold_positive = *q.gold_answer == q.answer_space[0];
      if (e.correct) {
        (gold_positive ? counts.tp : counts.tn)++;
      } else {
        (gold_positive ? counts.fn : counts.fp)++;
      }
    }

    if (e.correct) ++correct_count;
    time_sum += static_cast<double>(e.wall_time_ms);
    words_sum += static_cast<double>(e.answer_length_words);
    report.per_question.push_back(std::move(e));
  }

  const auto total = static_cast<double>(report.per_question.size());
  report.accuracy = total > 0 ? static_cast<double>(correct_count) / total : 0.0;
  if (binary_uniform && space) report.mcc_value = mcc(counts);
  if (proof_n > 0) report.mean_proof = proof_sum / static_cast<double>(proof_n);
  report.mean_time_ms = total > 0 ? time_sum / total : 0.0;
  report.mean_answer_length_words = total > 0 ? words_sum / total : 0.0;
  return report;
}

// --- rendering --------------------------------------------------------------

json report_to_json(const EvalReport& report) {
  json per = json::array();
  for (const PerQuestionEval& e : report.per_question) {
    json je;
    je["question_id"] = e.question_id;
    je["extracted_answer"] = e.extracted_answer ? json(*e.extracted_answer) : json(nullptr);
    je["correct"] = e.correct;
    if (e.proof) {
      json jp;
      to_json(jp, *e.proof);
      je["proof"] = std::move(jp);
    } else {
      je["proof"] = nullptr;
    }
    je["nodes_generated"] = e.nodes_generated;
    je["wall_time_ms"] = e.wall_time_ms;
    je["answer_length_words"] = e.answer_length_words;
    per.push_back(std::move(je));
  }
  json j;
  j["per_question"] = std::move(per);
  j["accuracy"] = report.accuracy;
  j["mcc"] = report.mcc_value ? json(*report.mcc_value) : json(nullptr);
  j["mean_proof"] = report.mean_proof ? json(*report.mean_proof) : json(nullptr);
  j["mean_time_ms"] = report.mean_time_ms;
  j["mean_answer_length_words"] = report.mean_answer_length_words;
  return j;
}

std::string render_report_table(const EvalReport& report) {
  char buf[256];
  std::string out;
  out += "question_id        answer         ok  proof  nodes     ms  words\n";
  out += "-----------------------------------------------------------------\n";
  for (const PerQuestionEval& e : report.per_question) {
    std::string proof = "-";
    if (e.proof) {
      std::snprintf(buf, sizeof(buf), "%.2f", e.proof->mean);
      proof = buf;
    }
    std::snprintf(buf, sizeof(buf), "%-18.18s %-14.14s %-3s %-6s %5lld %6lld %6lld\n",
                  e.question_id.c_str(),
                  e.extracted_answer ? e.extracted_answer->c_str() : "-",
                  e.correct ? "yes" : "no", proof.c_str(),
                  static_cast<long long>(e.nodes_generated),
                  static_cast<long long>(e.wall_time_ms),
                  static_cast<long long>(e.answer_length_words));
    out += buf;
  }
  out += "-----------------------------------------------------------------\n";
  std::snprintf(buf, sizeof(buf), "accuracy %.4f", report.accuracy);
  out += buf;
  if (report.mcc_value) {
    std::snprintf(buf, sizeof(buf), "  mcc %.4f", *report.mcc_value);
    out += buf;
  }
  if (report.mean_proof) {
    std::snprintf(buf, sizeof(buf), "  mean_proof %.3f", *report.mean_proof);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  mean_time_ms %.1f  mean_words %.1f\n",
                report.mean_time_ms, report.mean_answer_length_words);
  out += buf;
  return out;
}

std::string render_report_csv(const EvalReport& report) {
  std::string out =
      "question_id,extracted_answer,correct,proof_mean,nodes_generated,wall_time_ms,"
      "answer_length_words\n";
  char buf[256];
  for (const PerQuestionEval& e : report.per_question) {
    std::string proof;
    if (e.proof) {
      std::snprintf(buf, sizeof(buf), "%.6g", e.proof->mean);
      proof = buf;
    }
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%s,%lld,%lld,%lld\n", e.question_id.c_str(),
                  e.extracted_answer ? e.extracted_answer->c_str() : "", e.correct ? 1 : 0,
                  proof.c_str(), static_cast<long long>(e.nodes_generated),
                  static_cast<long long>(e.wall_time_ms),
                  static_cast<long long>(e.answer_length_words));
    out += buf;
  }
  return out;
}

}  // namespace stepsearch
