#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "drsr/insight.hpp"
#include "drsr/prompts.hpp"
#include "test_support.hpp"

using namespace drsr;
using namespace drsr::insight;

namespace {

Candidate fitted_candidate(const data::Dataset& d, std::string_view text, std::vector<double> params) {
    const auto vars = d.variable_names();
    auto e = expr::parse(text, vars);
    if (!e) throw std::runtime_error(e.error().describe());
    Candidate c;
    c.expression = *e;
    fit::FitResult r;
    r.params = std::move(params);
    r.score = *fit::score(*e, r.params, d);
    r.mse = -r.score;
    c.fit = r;
    c.category = Category::positive;
    return c;
}

}  // namespace

TEST(Insight, InitialIsPassthrough) {
    const auto d = testkit::linear_dataset();
    llm::ReplayBackend b({{llm::Role::data, 0, {"y increases monotonically with x"}}});
    const auto call = initial_insight(d, b, prompts::TemplateSet::defaults(), 5, {});
    EXPECT_EQ(call.insight.content, "y increases monotonically with x");
    EXPECT_EQ(call.insight.version, 0u);
    EXPECT_FALSE(call.insight.trigger_score.has_value());
    EXPECT_EQ(to_json(call.insight).at("trigger_score"), "initial");
    // The view is capped at the train split size.
    EXPECT_EQ(call.view.rows.size(), std::min<std::size_t>(100, d.splits.train.size()));
    EXPECT_NE(call.prompt.find("Task requirements"), std::string::npos);
    EXPECT_EQ(call.prompt.find("residual"), std::string::npos);
}

TEST(Insight, EmptyCompletionRetriedOnce) {
    const auto d = testkit::linear_dataset();
    llm::ReplayBackend ok({{llm::Role::data, 0, {"  "}}, {llm::Role::data, 1, {"second try"}}});
    EXPECT_EQ(initial_insight(d, ok, prompts::TemplateSet::defaults(), 1).insight.content, "second try");
    llm::ReplayBackend bad({{llm::Role::data, 0, {""}}, {llm::Role::data, 1, {"\n"}}});
    try {
        (void)initial_insight(d, bad, prompts::TemplateSet::defaults(), 1);
        FAIL();
    } catch (const llm::BackendError& e) {
        EXPECT_EQ(e.kind(), llm::BackendErrorKind::malformed);
    }
}

TEST(Insight, RefinementUsesResiduals) {
    const auto d = testkit::linear_dataset();
    const auto best = fitted_candidate(d, "params[0]*x", {2.0});
    Insight prev;
    prev.content = "old analysis";
    prev.version = 3;
    llm::ScriptedBackend b(testkit::scripted_answer);
    const auto call = refine_insight(best, d, prev, b, prompts::TemplateSet::defaults(), 9, 12);
    EXPECT_EQ(call.insight.version, 4u);
    EXPECT_EQ(call.insight.iteration, 12u);
    ASSERT_TRUE(call.insight.trigger_score.has_value());
    EXPECT_DOUBLE_EQ(*call.insight.trigger_score, best.fit->score);
    EXPECT_NE(call.prompt.find("old analysis"), std::string::npos);
    EXPECT_NE(call.prompt.find("residual"), std::string::npos);
    for (const auto& row : call.view.rows) {
        ASSERT_TRUE(row.residual.has_value());
        EXPECT_NEAR(*row.residual, 3.0, 1e-12);
    }
    const auto reqs = b.requests();
    ASSERT_EQ(reqs.size(), 1u);
    EXPECT_EQ(reqs[0].role, llm::Role::data);
    EXPECT_EQ(reqs[0].sampling, llm::Sampling::defaults_for(llm::Role::data));
}

TEST(Insight, ResidualsOnlyOnTrain) {
    const auto d = testkit::linear_dataset();
    const std::vector<std::string> vars = {"x"};
    auto e = expr::parse("params[0]*x + params[1]", vars);
    ASSERT_TRUE(e);
    const std::vector<double> params = {2.0, 2.0};
    const auto res = train_residuals(*e, params, d);
    ASSERT_EQ(res.size(), d.size());
    for (auto i : d.splits.train) EXPECT_NEAR(res[i], 1.0, 1e-12);
    for (auto i : d.splits.ood_test) EXPECT_TRUE(std::isnan(res[i]));
    auto bad = expr::parse("log(x)", vars);
    ASSERT_TRUE(bad);
    EXPECT_THROW((void)train_residuals(*bad, {}, d), std::logic_error);
}

TEST(Insight, RenderRowsTable) {
    const auto d = testkit::linear_dataset();
    data::ResampledView view;
    view.rows.push_back({0, {0.123456789}, 3.25, std::nullopt});
    view.rows.push_back({1, {-1.0}, 1.0, std::nullopt});
    view.size = 2;
    const auto table = render_rows(d, view);
    const auto header = table.substr(0, table.find('\n'));
    EXPECT_NE(header.find('x'), std::string::npos);
    EXPECT_NE(header.find('y'), std::string::npos);
    EXPECT_NE(table.find("0.123457"), std::string::npos);
    EXPECT_NE(table.find("3.25"), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

TEST(Insight, DescribeDatasetNamesVariables) {
    const auto d = testkit::linear_dataset();
    const auto text = describe_dataset(d);
    EXPECT_NE(text.find("x"), std::string::npos);
    EXPECT_NE(text.find("y"), std::string::npos);
}

TEST(Prompts, RenderPlaceholders) {
    EXPECT_EQ(prompts::render("a {{b}} c", {{"b", "B"}}), "a B c");
    EXPECT_EQ(prompts::render("{{b}}", {{"b", "{{c}}"}}), "{{c}}");
    EXPECT_THROW((void)prompts::render("{{missing}}", {}), std::invalid_argument);
    EXPECT_THROW((void)prompts::render("{{open", {{"open", "x"}}), std::invalid_argument);
    const auto defaults = prompts::TemplateSet::defaults();
    for (const char* name : {"main", "insight_initial", "insight_refine", "task_requirements", "idea_positive",
                             "idea_negative", "idea_invalid"})
        EXPECT_FALSE(defaults.get(name).empty()) << name;
    EXPECT_THROW((void)defaults.get("nope"), std::out_of_range);
}

TEST(Prompts, DirectoryOverrides) {
    testkit::TempDir dir("prompts");
    {
        std::ofstream out(dir / "main.txt");
        out << "custom {{target}}";
    }
    const auto set = prompts::TemplateSet::from_directory(dir.path());
    EXPECT_EQ(set.get("main"), "custom {{target}}");
    EXPECT_EQ(set.get("idea_invalid"), prompts::TemplateSet::defaults().get("idea_invalid"));
    EXPECT_THROW((void)prompts::TemplateSet::from_directory(dir / "absent"), std::runtime_error);
}
