// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "test_util.hpp"
#include "tvscope/cli.hpp"
#include "tvscope/fixtures.hpp"
#include "tvscope/reference_tables.hpp"
#include "tvscope/stats.hpp"

using namespace tvscope;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args) { return cli::run(args); }

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    f << s;
}

json read_json(const std::filesystem::path& p) {
    std::ifstream f(p);
    return json::parse(f);
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        fixtures::FixtureSpec spec;
        spec.seed = 4;
        spec.planted_sp = {{1, 6.5}};
        bundle_ = fixtures::generate(spec);
        fixtures::write_bundle(bundle_, dir_.path());
    }
    std::string in(const std::string& f) const { return (dir_ / f).string(); }
    std::string out() const { return (dir_ / "out").string(); }

    testutil::TempDir dir_{"cli"};
    fixtures::Bundle bundle_;
};

}  // namespace

TEST_F(CliTest, DiffMatchesManifestNorms) {
    ASSERT_EQ(run({"--out", out(), "diff", "--base", in("base.safetensors"), "--ft", in("ft.safetensors")}), cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "diff_report.json");
    const auto& planted = bundle_.manifest.at("planted").at("delta_layer_norms");
    ASSERT_EQ(planted.size(), 4u);
    ASSERT_EQ(report["layer_norms"].size(), 4u);
    for (const auto& [label, norm] : planted.items()) {
        const std::string key = label == "non-layer" ? "non_layer" : label.substr(1);
        EXPECT_NEAR(report["layer_norms"].at(key).get<double>(), norm.get<double>(), 1e-12) << label;
    }
    EXPECT_NEAR(report["global_norm"].get<double>(), bundle_.manifest["planted"]["delta_global_norm"].get<double>(), 1e-12);
    const auto tv = task_vector_from(read_checkpoint(dir_ / "out" / "task_vector.safetensors"));
    EXPECT_EQ(tv, bundle_.planted);
    EXPECT_EQ(report["effective_config"]["command"], "diff");
}

TEST_F(CliTest, DiffIdenticalWarnsAndIncompatibleFails) {
    EXPECT_EQ(run({"--out", out(), "diff", "--base", in("base.safetensors"), "--ft", in("base.safetensors")}), cli::kExitOk);
    EXPECT_TRUE(read_json(dir_ / "out" / "diff_report.json")["zero"].get<bool>());
    EXPECT_EQ(run({"--out", out(), "diff", "--base", in("base.safetensors"), "--ft", in("sae_decoder.safetensors")}),
              cli::kExitInput);
    EXPECT_EQ(run({"--out", out(), "diff", "--base", in("missing.safetensors"), "--ft", in("ft.safetensors")}),
              cli::kExitInput);
}

TEST_F(CliTest, DiagnoseReproducesReferenceTable) {
    std::ofstream f(dir_ / "reference.csv");
    write_activation_stats(fixtures::reference_layer_stats(), f);
    f.close();
    ASSERT_EQ(run({"--out", out(), "diagnose", "--stats", in("reference.csv"), "--num-layers", "34"}), cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "diagnose_report.json");
    EXPECT_EQ(report["layers"].size(), 34u);
    EXPECT_EQ(report["n_selected"], 14);
    for (const auto& row : fixtures::load_reference_tables().layer_specificity) {
        const auto& r = report["layers"][static_cast<std::size_t>(row.layer)];
        EXPECT_NEAR(r["sp"].get<double>(), row.sp, 1e-9);
        EXPECT_EQ(r["n_feat"], row.n_feat);
        EXPECT_EQ(r["selected"], row.selected);
    }
    EXPECT_TRUE(std::filesystem::exists(dir_ / "out" / "sp_series.csv"));
}

TEST_F(CliTest, DiagnoseEmptyAndMalformed) {
    write_text(dir_ / "empty.csv", "layer,feature,mean_target,mean_other\n");
    EXPECT_EQ(run({"--out", out(), "diagnose", "--stats", in("empty.csv")}), cli::kExitOk);
    write_text(dir_ / "bad.csv", "layer,feature,mean_target,mean_other\n0,0,-1,2\n");
    EXPECT_EQ(run({"--out", out(), "diagnose", "--stats", in("bad.csv")}), cli::kExitInput);
}

TEST_F(CliTest, SelectReferenceLayersAndEmptyGuard) {
    std::ofstream f(dir_ / "reference.csv");
    write_activation_stats(fixtures::reference_layer_stats(), f);
    f.close();
    ASSERT_EQ(run({"--out", out(), "select", "--stats", in("reference.csv"), "--strategy", "sp", "--tau", "4.0"}), cli::kExitOk);
    EXPECT_EQ(read_json(dir_ / "out" / "selection.json")["layers"],
              json({14, 15, 17, 19, 20, 21, 22, 23, 24, 25, 27, 30, 31, 32}));
    EXPECT_EQ(run({"--out", out(), "select", "--stats", in("reference.csv"), "--tau", "99"}), cli::kExitEmpty);
    EXPECT_EQ(run({"--out", out(), "select", "--stats", in("reference.csv"), "--tau", "99", "--allow-empty"}), cli::kExitOk);
    EXPECT_EQ(run({"--out", out(), "select", "--strategy", "bogus"}), cli::kExitInput);
    EXPECT_EQ(run({"--out", out(), "select", "--strategy-json", R"({"type":"explicit","layers":[3,1]})"}), cli::kExitOk);
    EXPECT_EQ(read_json(dir_ / "out" / "selection.json")["layers"], json({1, 3}));
}

TEST_F(CliTest, InjectAlphaZeroKeepsBaseBytes) {
    ASSERT_EQ(run({"--out", out(), "diff", "--base", in("base.safetensors"), "--ft", in("ft.safetensors")}), cli::kExitOk);
    ASSERT_EQ(run({"--out", out(), "inject", "--base", in("base.safetensors"), "--tv",
                   (dir_ / "out" / "task_vector.safetensors").string(), "--layers", "0,1,2", "--alpha", "0"}),
              cli::kExitOk);
    EXPECT_EQ(read_file_bytes(dir_ / "out" / "edited.safetensors"), read_file_bytes(dir_ / "base.safetensors"));
    EXPECT_EQ(run({"--out", out(), "inject", "--base", in("base.safetensors"), "--tv",
                   (dir_ / "out" / "task_vector.safetensors").string()}),
              cli::kExitEmpty);
}

TEST_F(CliTest, ProjectThenEnergyMatchesOracle) {
    ASSERT_EQ(run({"--out", out(), "diff", "--base", in("base.safetensors"), "--ft", in("ft.safetensors")}), cli::kExitOk);
    const std::string tv = (dir_ / "out" / "task_vector.safetensors").string();
    ASSERT_EQ(run({"--out", out(), "project", "--tv", tv, "--layers", "1", "--decoder", in("sae_decoder.safetensors"),
                   "--stats", in("activation_stats.csv"), "--projection-mode", "orthogonal"}),
              cli::kExitOk);
    ASSERT_EQ(run({"--out", out(), "energy", "--tv", tv, "--projected", (dir_ / "out" / "projected_tv.safetensors").string(),
                   "--layers", "1"}),
              cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "energy_report.json");

    // Oracle: project every eligible matrix of layer 1 literally and sum the energy.
    const auto features = domain_features(diagnose(bundle_.stats), kDefaultTauF).at(LayerId{1});
    const Matrix& dec = bundle_.decoder.directions.at(LayerId{1});
    std::vector<std::vector<double>> dirs;
    for (auto j : features) dirs.emplace_back(dec.data.begin() + j * static_cast<long>(dec.cols), dec.data.begin() + (j + 1) * static_cast<long>(dec.cols));
    double num = 0.0, den = 0.0;
    for (const auto& name : bundle_.planted.tensors_in(LayerId{1})) {
        const auto& d = bundle_.planted.deltas.at(name);
        for (double x : d.values) den += x * x;
        Matrix m;
        if (d.shape.size() == 1) m = Matrix(static_cast<std::size_t>(d.shape[0]), 1, d.values);
        else if (static_cast<std::size_t>(d.shape[0]) == dec.cols) m = Matrix(static_cast<std::size_t>(d.shape[0]), static_cast<std::size_t>(d.shape[1]), d.values);
        else continue;
        for (double x : fixtures::oracle_project(m, dirs, ProjectionSide::output_rows, ProjectionMode::orthogonal).data) num += x * x;
    }
    EXPECT_NEAR(report["layers"]["1"]["ratio"].get<double>(), std::sqrt(num / den), 1e-12);
}

TEST_F(CliTest, ConfigPrecedence) {
    std::ofstream f(dir_ / "reference.csv");
    write_activation_stats(fixtures::reference_layer_stats(), f);
    f.close();
    write_text(dir_ / "cfg.json", json({{"out", out()}, {"select", {{"stats", in("reference.csv")}, {"tau", 4.5}}}}).dump());
    ASSERT_EQ(run({"--config", in("cfg.json"), "select"}), cli::kExitOk);
    auto sel = read_json(dir_ / "out" / "selection.json");
    EXPECT_EQ(sel["n_layers"], 11);
    EXPECT_EQ(sel["effective_config"]["options"]["tau"], "4.5");
    ASSERT_EQ(run({"--config", in("cfg.json"), "select", "--tau", "4.0"}), cli::kExitOk);
    sel = read_json(dir_ / "out" / "selection.json");
    EXPECT_EQ(sel["n_layers"], 14);
    EXPECT_FALSE(sel["effective_config"].contains("out"));
    EXPECT_FALSE(sel["effective_config"].contains("threads"));
}

TEST_F(CliTest, EvalStatsReferenceCheck) {
    std::string csv = "subject,n,acc_base,acc_edit\n";
    for (const auto& r : fixtures::load_reference_tables().main_results) {
        csv += r.subject + "," + std::to_string(r.n) + "," + std::to_string(r.base_pct / 100) + "," + std::to_string(r.edit_pct / 100) + "\n";
    }
    write_text(dir_ / "t1.csv", csv);
    ASSERT_EQ(run({"--out", out(), "eval-stats", "--counts", in("t1.csv"), "--paper-check"}), cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "eval_report.json");
    EXPECT_TRUE(report["reference_check"]["pass"].get<bool>());
    const auto& rows = fixtures::load_reference_tables().main_results;
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(report["subjects"][i]["z"].get<double>(), rows[i].z, 0.1);

    write_text(dir_ / "eq.csv", "subject,n,correct_base,correct_edit\nA,100,40,40\nB,50,10,10\n");
    ASSERT_EQ(run({"--out", out(), "eval-stats", "--counts", in("eq.csv")}), cli::kExitOk);
    for (const auto& s : read_json(dir_ / "out" / "eval_report.json")["subjects"]) EXPECT_EQ(s["z"].get<double>(), 0.0);
    write_text(dir_ / "bad.csv", "subject,n,correct_base,correct_edit\nA,100,140,40\n");
    EXPECT_EQ(run({"--out", out(), "eval-stats", "--counts", in("bad.csv")}), cli::kExitInput);
}

TEST_F(CliTest, SweepRanksPublishedConfigurations) {
    // NT counts whose z is as close as possible to each published top-10 z.
    const std::int64_t n = 540, base = 160;
    json configs = json::array();
    int k = 0;
    for (const auto& r : fixtures::load_reference_tables().ranking) {
        std::int64_t best = base;
        for (std::int64_t c = base; c <= n; ++c) {
            if (std::fabs(stats::ztest({"NT", n, base, c}).z - r.nt_z) < std::fabs(stats::ztest({"NT", n, base, best}).z - r.nt_z)) best = c;
        }
        const std::string file = "counts_" + std::to_string(k++) + ".csv";
        write_text(dir_ / file, "subject,n,correct_base,correct_edit\nNT," + std::to_string(n) + "," + std::to_string(base) + "," +
                                    std::to_string(best) + "\n");
        const std::int64_t layers = r.config.find("14L") != std::string::npos ? 14 : r.config.find("noDeep") != std::string::npos ? 11 : 10;
        std::vector<std::int64_t> sel;
        for (std::int64_t l = 0; l < layers; ++l) sel.push_back(l);
        configs.push_back({{"name", r.config}, {"selection", sel}, {"alpha", r.alpha}, {"counts", file}});
    }
    write_text(dir_ / "sweep.json", json({{"configs", configs}}).dump());
    ASSERT_EQ(run({"--out", out(), "sweep", "--grid", in("sweep.json")}), cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "sweep_report.json");
    const auto& ranking = report["ranking"];
    ASSERT_EQ(ranking.size(), 10u);
    EXPECT_EQ(ranking[0]["name"], "SP4 14L");
    EXPECT_EQ(ranking[0]["alpha"], 0.80);
    EXPECT_EQ(ranking[0]["budget"], 11.2);
    std::vector<int> ranks;
    for (const auto& r : ranking) ranks.push_back(r["rank"].get<int>());
    EXPECT_EQ(ranks, (std::vector<int>{1, 2, 3, 3, 5, 6, 6, 6, 9, 9}));

    write_text(dir_ / "one.json", R"({"configs":[{"name":"solo","selection":[1],"alpha":1.0,"counts":"counts_0.csv"}]})");
    ASSERT_EQ(run({"--out", out(), "sweep", "--grid", in("one.json")}), cli::kExitOk);
    EXPECT_EQ(read_json(dir_ / "out" / "sweep_report.json")["ranking"][0]["rank"], 1);
}

TEST_F(CliTest, ReportAndUsageErrors) {
    ASSERT_EQ(run({"--out", out(), "report"}), cli::kExitOk);
    const auto report = read_json(dir_ / "out" / "report.json");
    EXPECT_TRUE(report["significance"]["pass"].get<bool>());
    EXPECT_EQ(report["selections"]["4.0"].size(), 14u);
    EXPECT_EQ(run({}), cli::kExitInput);
    EXPECT_EQ(run({"nonsense"}), cli::kExitInput);
    EXPECT_EQ(run({"--help"}), cli::kExitOk);
    EXPECT_EQ(run({"diagnose"}), cli::kExitInput);
}
