#include "stepsearch/core.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "stepsearch/errors.hpp"

namespace stepsearch {
namespace {

ReasoningStep make_step(const std::string& text, double logprob_each = -0.1) {
  ReasoningStep step;
  step.text = text;
  std::string rest = text;
  // one token per word, whitespace glued to the following word
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    step.tokens.push_back({text.substr(start, i - start), logprob_each});
  }
  step.perplexity = std::exp(-logprob_each);
  return step;
}

TEST(Question, ValidateRejectsInconsistentGold) {
  Question q;
  q.id = "q1";
  q.prompt_text = "pick one";
  q.answer_space = {"yes", "no"};
  q.gold_answer = "maybe";
  EXPECT_THROW(q.validate(), Error);
  q.gold_answer = "yes";
  EXPECT_NO_THROW(q.validate());
}

TEST(Question, ValidateRejectsEmptyIdOrPrompt) {
  Question q;
  q.prompt_text = "text";
  EXPECT_THROW(q.validate(), Error);
  q.id = "q";
  q.prompt_text = "";
  EXPECT_THROW(q.validate(), Error);
}

TEST(ReasoningStep, ValidateChecksPerplexityAgainstTokens) {
  ReasoningStep step = make_step("one two", -0.25);
  EXPECT_NO_THROW(step.validate());
  step.perplexity *= 1.5;
  EXPECT_THROW(step.validate(), Error);
}

TEST(ReasoningStep, ValidateRejectsTextTokenMismatch) {
  ReasoningStep step = make_step("one two");
  step.text = "one three";
  EXPECT_THROW(step.validate(), Error);
}

TEST(SearchState, ExtendGrowsDepth) {
  SearchState state("q1");
  EXPECT_EQ(state.depth(), -1);
  EXPECT_TRUE(state.empty());
  state = state_extend(state, make_step("a"), 4);
  EXPECT_EQ(state.depth(), 0);
  state = state_extend(state, make_step("b"), 4);
  EXPECT_EQ(state.depth(), 1);
  EXPECT_EQ(state.steps()[0].text, "a");
  EXPECT_EQ(state.last_step().text, "b");
}

TEST(SearchState, ExtendPastTerminalThrows) {
  SearchState state("q1");
  ReasoningStep last = make_step("done");
  last.terminal = true;
  state = state_extend(state, last, 4);
  EXPECT_THROW(state_extend(state, make_step("more"), 4), Error);
  try {
    state_extend(state, make_step("more"), 4);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ExtendPastTerminal);
  }
}

TEST(SearchState, ExtendBeyondMaxStepsThrows) {
  SearchState state("q1");
  state = state_extend(state, make_step("a"), 2);
  state = state_extend(state, make_step("b"), 2);
  try {
    state_extend(state, make_step("c"), 2);
    FAIL() << "expected DepthExceeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DepthExceeded);
  }
}

TEST(SearchConfig, ValidateBounds) {
  SearchConfig c;
  EXPECT_NO_THROW(c.validate());
  c.theta = -0.5;
  EXPECT_THROW(c.validate(), Error);
  c = SearchConfig{};
  c.theta = 0.0;  // legal: every step regenerates the full beam
  EXPECT_NO_THROW(c.validate());
  c.max_beam = 0;
  EXPECT_THROW(c.validate(), Error);
  c = SearchConfig{};
  c.step_delimiter.clear();
  EXPECT_THROW(c.validate(), Error);
}

TEST(SearchConfig, JsonRoundTrip) {
  SearchConfig c;
  c.theta = 1.3;
  c.max_beam = 4;
  c.strategy = Strategy::best_of_n;
  c.scorer = ScorerKind::self_eval;
  c.seed = 7;
  json j = c;
  SearchConfig back = j.get<SearchConfig>();
  EXPECT_DOUBLE_EQ(back.theta, 1.3);
  EXPECT_EQ(back.max_beam, 4);
  EXPECT_EQ(back.strategy, Strategy::best_of_n);
  EXPECT_EQ(back.scorer, ScorerKind::self_eval);
  EXPECT_EQ(back.seed, 7u);
}

TEST(SearchConfig, JsonAcceptsInfTheta) {
  json j = {{"theta", "inf"}};
  SearchConfig c = j.get<SearchConfig>();
  EXPECT_TRUE(std::isinf(c.theta));
  json j2 = {{"theta", "infinity"}};
  EXPECT_TRUE(std::isinf(j2.get<SearchConfig>().theta));
}

TEST(Seeds, AttemptRoundTrips) {
  for (int attempt : {0, 1, 2, 15, 255}) {
    const std::uint64_t seed = derive_attempt_seed(42, "q-1", 3, attempt);
    EXPECT_EQ(attempt_from_seed(seed), attempt);
  }
}

TEST(Seeds, DistinctAcrossInputs) {
  const std::uint64_t base = derive_attempt_seed(42, "q-1", 0, 0);
  EXPECT_NE(base, derive_attempt_seed(43, "q-1", 0, 0));
  EXPECT_NE(base, derive_attempt_seed(42, "q-2", 0, 0));
  EXPECT_NE(base, derive_attempt_seed(42, "q-1", 1, 0));
  EXPECT_NE(base, derive_attempt_seed(42, "q-1", 0, 1));
}

TEST(Prompt, BuildStepPromptJoinsSelectedSteps) {
  Question q;
  q.id = "q1";
  q.prompt_text = "Why?";
  SearchState state("q1");
  EXPECT_EQ(build_step_prompt(q, state, "\n\n"), "Why?\n\n");
  state = state_extend(state, make_step("First."), 8);
  state = state_extend(state, make_step("Second."), 8);
  EXPECT_EQ(build_step_prompt(q, state, "\n\n"), "Why?\n\nFirst.\n\nSecond.\n\n");
}

TEST(Tree, AddNodeMaintainsAccounting) {
  SearchTree tree;
  tree.root_question = "q1";
  const int a = tree.add_node(-1, make_step("a"));
  const int b = tree.add_node(-1, make_step("b"));
  const int c = tree.add_node(a, make_step("c"));
  EXPECT_EQ(a, 0);
  EXPECT_EQ(b, 1);
  EXPECT_EQ(c, 2);
  EXPECT_EQ(tree.accounting.nodes_generated, 3);
  EXPECT_THROW(tree.add_node(99, make_step("x")), Error);
}

TEST(Tree, SelectedPathAndVerify) {
  SearchTree tree;
  tree.root_question = "q1";
  const int a = tree.add_node(-1, make_step("a"));
  tree.add_node(-1, make_step("b"));
  const int c = tree.add_node(a, make_step("c"));
  tree.nodes[a].selected = true;
  tree.nodes[c].selected = true;
  EXPECT_NO_THROW(tree.verify());
  const std::vector<int> path = tree.selected_path();
  ASSERT_EQ(path.size(), 2u);
  EXPECT_EQ(path[0], a);
  EXPECT_EQ(path[1], c);

  tree.nodes[1].selected = true;  // two selected roots: no longer a chain
  EXPECT_THROW(tree.verify(), Error);
}

TEST(Tree, JsonRoundTripExcludesTimingByDefault) {
  SearchTree tree;
  tree.root_question = "q1";
  const int a = tree.add_node(-1, make_step("a"));
  tree.nodes[a].selected = true;
  tree.accounting.backend_calls = 5;
  tree.accounting.wall_time_ms = 1234;

  json j = tree_to_json(tree);
  EXPECT_FALSE(j.at("accounting").contains("wall_time_ms"));
  SearchTree back = tree_from_json(j);
  EXPECT_EQ(back.accounting.wall_time_ms, 0);
  EXPECT_EQ(back.accounting.backend_calls, 5);
  EXPECT_EQ(back.nodes.size(), 1u);
  EXPECT_EQ(back.nodes[0].step.text, "a");

  json timed = tree_to_json(tree, /*include_timing=*/true);
  EXPECT_EQ(timed.at("accounting").at("wall_time_ms").get<std::int64_t>(), 1234);
}

TEST(Outcome, VerifyChecksFinalText) {
  SearchTree tree;
  tree.root_question = "q1";
  const int a = tree.add_node(-1, make_step("a"));
  const int b = tree.add_node(a, make_step("b"));
  tree.nodes[a].selected = true;
  tree.nodes[b].selected = true;

  SearchOutcome outcome;
  outcome.tree = tree;
  outcome.final_text = "a\n\nb";
  EXPECT_NO_THROW(outcome.verify("\n\n"));
  outcome.final_text = "a b";
  EXPECT_THROW(outcome.verify("\n\n"), Error);
}

TEST(Outcome, JsonRoundTrip) {
  SearchTree tree;
  tree.root_question = "q1";
  const int a = tree.add_node(-1, make_step("answer"));
  tree.nodes[a].selected = true;
  SearchOutcome outcome;
  outcome.tree = tree;
  outcome.final_text = "answer";
  outcome.extracted_answer = "yes";
  json j = outcome_to_json(outcome);
  SearchOutcome back = outcome_from_json(j);
  EXPECT_EQ(back.final_text, "answer");
  ASSERT_TRUE(back.extracted_answer.has_value());
  EXPECT_EQ(*back.extracted_answer, "yes");
  EXPECT_EQ(back.tree.nodes.size(), 1u);
}

TEST(QuestionsJsonl, RoundTrip) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "stepsearch_core_test_questions.jsonl";
  std::vector<Question> qs(2);
  qs[0].id = "q1";
  qs[0].domain = Domain::finance;
  qs[0].prompt_text = "Assess the stock.";
  qs[0].gold_answer = "positive";
  qs[0].answer_space = {"positive", "negative"};
  qs[1].id = "q2";
  qs[1].prompt_text = "Free-form question";
  save_questions_jsonl(qs, path.string());
  const std::vector<Question> back = load_questions_jsonl(path.string());
  fs::remove(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "q1");
  EXPECT_EQ(back[0].domain, Domain::finance);
  ASSERT_TRUE(back[0].gold_answer.has_value());
  EXPECT_EQ(*back[0].gold_answer, "positive");
  EXPECT_EQ(back[0].answer_space.size(), 2u);
  EXPECT_FALSE(back[1].gold_answer.has_value());
}

TEST(EnumStrings, RoundTrip) {
  for (Strategy s : {Strategy::selective, Strategy::stage_beam, Strategy::sentence_beam,
                     Strategy::best_of_n, Strategy::single_chain}) {
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  }
  for (Domain d : {Domain::finance, Domain::legal, Domain::generic}) {
    EXPECT_EQ(domain_from_string(to_string(d)), d);
  }
  for (ScorerKind k : {ScorerKind::perplexity, ScorerKind::self_eval}) {
    EXPECT_EQ(scorer_from_string(to_string(k)), k);
  }
  EXPECT_THROW(strategy_from_string("bogus"), Error);
}

TEST(RenderTemplate, SubstitutesAllPlaceholders) {
  const std::string out =
      render_template("Q: {{q}} A: {{a}} again {{q}}", {{"q", "one"}, {"a", "two"}});
  EXPECT_EQ(out, "Q: one A: two again one");
}

TEST(RenderTemplate, MissingValueThrows) {
  try {
    render_template("{{missing}}", {});
    FAIL() << "expected TemplateError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TemplateError);
  }
}

TEST(RenderTemplate, UnclosedPlaceholderThrows) {
  EXPECT_THROW(render_template("{{open", {{"open", "x"}}), Error);
}

TEST(JoinSteps, Joins) {
  EXPECT_EQ(join_steps({"a", "b", "c"}, "--"), "a--b--c");
  EXPECT_EQ(join_steps({}, "--"), "");
  EXPECT_EQ(join_steps({"only"}, "--"), "only");
}

}  // namespace
}  // namespace stepsearch
