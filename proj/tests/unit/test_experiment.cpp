#include <limits>
#include <regex>

#include "doctest.h"
#include "softqe/error.hpp"
#include "softqe/experiment.hpp"
#include "softqe/json_io.hpp"
#include "util.hpp"

using namespace softqe;

namespace {

ExperimentSpec tiny_spec(std::vector<std::string> cells, std::vector<std::uint64_t> seeds)
{
    ExperimentSpec s;
    s.name = "tiny";
    s.corpus = testutil::tiny_corpus_config();
    s.train = testutil::tiny_train_config();
    s.cells.clear();
    for (const auto& c : cells) s.cells.push_back(parse_cell(c));
    s.seeds = std::move(seeds);
    return s;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix)
{
    std::size_t n = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0 ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("configs round-trip through JSON")
{
    const auto corpus = testutil::tiny_corpus_config();
    const auto back = corpus_config_from_json(to_json(corpus));
    CHECK(to_json(back) == to_json(corpus));

    TrainConfig t = testutil::tiny_train_config();
    t.objective = Objective::kd_composite;
    t.kl_direction = KlDirection::student_to_teacher;
    CHECK(train_config_from_json(to_json(t)) == t);

    const ExperimentSpec s = tiny_spec({"dpr", "dpr:q_plus", "softqe_dist_only"}, {4, 9});
    const ExperimentSpec s2 = experiment_spec_from_json(to_json(s));
    CHECK(dump(to_json(s2)) == dump(to_json(s)));
}

TEST_CASE("config readers reject unknown keys and bad values")
{
    CHECK_THROWS_AS(corpus_config_from_json(Json{{"vocab", 3}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(Json{{"epochs", "six"}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(Json{{"schedule", {{"kind", "cosine"}}}}), ConfigError);
    CHECK_THROWS_AS(experiment_spec_from_json(Json{{"seeds", Json::array()}}), ConfigError);
    CHECK_THROWS_AS(experiment_spec_from_json(Json{{"cells", {"bogus"}}}), ConfigError);
    CHECK_THROWS_AS(parse_cell("dpr:q_minus"), ConfigError);
}

TEST_CASE("changing epochs without a schedule rebuilds the default schedule")
{
    const TrainConfig t = train_config_from_json(Json{{"epochs", 4}});
    CHECK(t.schedule == default_schedule(4));
    const TrainConfig s = train_config_from_json(Json{{"epochs", 4}, {"schedule", {{"kind", "constant"}, {"alpha", 0.2}}}});
    CHECK(s.schedule == LossSchedule::constant(4, 0.2));
}

TEST_CASE("lineage configs set objective, schedule and freezing")
{
    const TrainConfig base;
    CHECK(lineage_config("dpr", base).objective == Objective::contrastive);
    CHECK(lineage_config("softqe", base).schedule == base.schedule);
    CHECK(lineage_config("softqe_dist_only", base).schedule.per_epoch.back().alpha == 1.0);
    CHECK(lineage_config("softqe_cont_only", base).schedule.per_epoch.front().alpha == 0.0);
    CHECK(lineage_config("softqe_combined", base).schedule.per_epoch.front().alpha == 0.2);
    CHECK_FALSE(lineage_config("softqe_unfrozen", base).freeze_passage_encoder);
    CHECK(lineage_config("softqe_kd", base).objective == Objective::kd_composite);
    CHECK(lineage_config("score_only_kd", base).objective == Objective::score_only_kd);
    CHECK(default_query_input("q2d") == QueryInput::q_plus);
    CHECK_THROWS_AS(lineage_config("nope", base), ConfigError);
}

TEST_CASE("one lineage and one seed give a one-row table without a significance column")
{
    const auto out = testutil::temp_dir("exp_single");
    run_experiment(tiny_spec({"dpr"}, {1}), out);
    const std::string md = testutil::read_bytes(out / "report.md");
    CHECK(md.find("p vs") == std::string::npos);
    CHECK(md.find("±") == std::string::npos);
    CHECK(count_lines_starting(md, "| dpr |") == 2);  // metric row and loss row
    CHECK(std::filesystem::exists(out / "runs" / "dpr" / "seed-1" / "model.ckpt"));
    CHECK(std::filesystem::exists(out / "runs" / "dpr" / "seed-1" / "metrics_q.json"));
}

TEST_CASE("daggers appear exactly where the stored matrix has p < 0.05, and regeneration is byte-identical")
{
    const auto out = testutil::temp_dir("exp_grid");
    const auto spec = tiny_spec({"dpr", "dpr:q_plus", "q2d", "softqe", "softqe_combined"}, {1, 2});
    run_experiment(spec, out);
    const std::string md = testutil::read_bytes(out / "report.md");
    const Json sig = read_json_file(out / "significance.json");
    for (const auto& cell : spec.cells) {
        const std::string label = cell.label();
        const std::regex row("\\| " + std::regex_replace(label, std::regex("[+:]"), "\\$&") + " \\|([^\\n]*)");
        std::smatch m;
        REQUIRE(std::regex_search(md, m, row));
        const bool dagger = m[1].str().find("†") != std::string::npos;
        if (label == "dpr") {
            CHECK_FALSE(dagger);
            continue;
        }
        const Json& t = sig.at("pooled").at(label).at("dpr");
        REQUIRE_FALSE(t.is_null());
        CHECK(dagger == (t.at("p").get<double>() < 0.05));
    }
    const std::string losses = testutil::read_bytes(out / "losses.csv");
    CHECK(count_lines_starting(losses, "softqe,1,") == spec.train.epochs + 1);

    std::map<std::string, std::string> before;
    for (const char* f : {"report.md", "losses.csv", "significance.json"}) before[f] = testutil::read_bytes(out / f);
    assemble_report(out);
    for (const auto& [f, bytes] : before) CHECK(testutil::read_bytes(out / f) == bytes);
}

TEST_CASE("a failing cell is recorded and the rest of the grid completes")
{
    const auto out = testutil::temp_dir("exp_failure");
    auto spec = tiny_spec({"dpr", "softqe"}, {1});
    spec.lineage_overrides["softqe"] = Json{{"optimizer", "sgd"},
                                            {"learning_rate", std::numeric_limits<double>::max()},
                                            {"grad_clip_norm", std::numeric_limits<double>::max()}};
    run_experiment(spec, out);
    CHECK(std::filesystem::exists(out / "runs" / "softqe" / "seed-1" / "failed.txt"));
    const std::string md = testutil::read_bytes(out / "report.md");
    CHECK(md.find("| softqe | failed |") != std::string::npos);
    CHECK(md.find("- softqe seed 1") != std::string::npos);
    CHECK(md.find("| dpr | 0.") != std::string::npos);
}

TEST_CASE("run directories load back into models")
{
    const auto out = testutil::temp_dir("exp_rundir");
    run_experiment(tiny_spec({"q2d"}, {1}), out);
    const auto dir = cell_directory(out, "q2d", 1);
    for (const char* f : {"config.json", "model.ckpt", "loss_history.csv", "provenance.json", "negatives.json"})
        CHECK(std::filesystem::exists(dir / f));
    const TrainedModel m = model_from_run_directory(dir);
    CHECK(m.query_params.role == Role::teacher_query);
    CHECK(m.provenance.lineage == "q2d");
    CHECK_THROWS_AS(model_from_run_directory(out / "missing"), InputError);
}
