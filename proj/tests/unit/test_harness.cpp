#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "harness.hpp"
#include "test_util.hpp"

using namespace nelastic;
using nelastic::test::error_kind;
using nelastic::test::source_path;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nelastic_test_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string config_error(const std::string& text) {
    try {
        (void)parse_config(text);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

const char* kMinimal = R"([walls]
0
1.0 1.5
2.0
[floors]
1 0.4
2 0.25
[kicks]
default xi=uniform(0.2,0.4) eta=uniform(0.6,1.0)
[sim]
epsilon = 0.01
horizon = 0.5
replicas = 4
seed = 5
)";

}  // namespace

TEST_CASE("config parsing", "[harness]") {
    const Config c = parse_config(kMinimal);
    CHECK(c.system.wall_positions == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(c.system.interior_heights == std::vector<double>{1.5});
    CHECK(c.system.leaf_floors == std::vector<double>{0.4, 0.25});
    CHECK(c.system.energy_cap == Catch::Approx(2 * 1.5 + 1));
    CHECK(c.sim.epsilon == 0.01);
    CHECK(c.sim.replicas == 4);
    CHECK(c.sim.seed == 5);
    CHECK(c.has_kicks);
    CHECK(c.system.kicks.size() == 3);

    const Config fig = parse_config(read_file(source_path("fixtures/nested.cfg")));
    CHECK(fig.system.wall_positions.size() == 5);
    CHECK(fig.analysis.branch == "0.3,0.6,0.7");
    CHECK(fig.system.kicks[3].xi.text() == "uniform(-0.2,0.6)");
}

TEST_CASE("config errors carry line and column", "[harness]") {
    const std::string bad_number = std::string(kMinimal).replace(std::string(kMinimal).find("1.0 1.5"), 7, "1.0 x.5");
    const std::string msg = config_error(bad_number);
    CHECK(msg.find("line 3, column 5") != std::string::npos);
    CHECK(error_kind([&] { (void)parse_config(bad_number); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_config("[walls]\n0\n1 1.0\n2 1.0\n3\n[floors]\n1 0.1\n2 0.1\n3 0.1\n"); }) ==
          ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_config("[nonsense]\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_config("[walls]\n0\n1\n[floors]\n1 0.5\n[sim]\nepsilon = abc\n"); }) == ErrorKind::Config);
}

TEST_CASE("same seed gives byte-identical outputs", "[harness]") {
    const fs::path a = scratch("a"), b = scratch("b");
    RunRequest req;
    req.command = "simulate";
    req.config_text = kMinimal;
    req.out_dir = a.string();
    const RunResult ra = run_command(req);
    req.out_dir = b.string();
    const RunResult rb = run_command(req);
    REQUIRE(ra.outputs.size() == rb.outputs.size());
    for (std::size_t i = 0; i < ra.outputs.size(); ++i) {
        CHECK(ra.outputs[i].file == rb.outputs[i].file);
        CHECK(ra.outputs[i].hash == rb.outputs[i].hash);
        CHECK(read_file((a / ra.outputs[i].file).string()) == read_file((b / rb.outputs[i].file).string()));
    }
    req.seed = 6;
    req.out_dir = scratch("c").string();
    const RunResult rc = run_command(req);
    bool differs = false;
    for (std::size_t i = 0; i < ra.outputs.size(); ++i)
        if (ra.outputs[i].file == "trajectory.csv") differs = ra.outputs[i].hash != rc.outputs[i].hash;
    CHECK(differs);
}

TEST_CASE("manifest records everything needed to rerun", "[harness]") {
    const fs::path dir = scratch("manifest");
    RunRequest req;
    req.command = "simulate";
    req.config_text = kMinimal;
    req.seed = 9;
    req.out_dir = dir.string();
    const RunResult r = run_command(req);
    const auto m = nlohmann::json::parse(read_file(r.manifest_path));
    CHECK(m.at("tool") == "nelastic");
    CHECK(m.at("version") == kVersion);
    CHECK(m.at("command") == "simulate");
    CHECK(m.at("seed") == 9);
    CHECK(m.at("config_text") == kMinimal);
    CHECK(m.contains("flags"));
    CHECK(m.contains("config_hash"));
    CHECK(m.contains("duration_seconds"));
    CHECK(m.at("outputs").size() == r.outputs.size());
    for (const auto& o : m.at("outputs")) CHECK(fs::exists(dir / o.at("file").get<std::string>()));
    const std::string traj = read_file((dir / "trajectory.csv").string());
    CHECK(traj.rfind("t,H_step,H_hat,edge\n", 0) == 0);
    CHECK(read_file((dir / "events.csv").string()).rfind("t,side,kick,H_pre,H_post,edge\n", 0) == 0);

    const fs::path again = scratch("rerun");
    const RunResult rr = rerun_manifest(r.manifest_path, again.string());
    CHECK(read_file((again / "trajectory.csv").string()) == traj);

    // A tampered manifest hash makes the rerun fail.
    auto tampered = m;
    tampered["outputs"][0]["fnv1a"] = "0000000000000000";
    const fs::path bad = dir / "tampered.json";
    std::ofstream(bad) << tampered.dump(2);
    CHECK(error_kind([&] { (void)rerun_manifest(bad.string(), scratch("rerun2").string()); }) == ErrorKind::Invariant);
}

TEST_CASE("output directory precedence", "[harness]") {
    CHECK(resolve_out_dir("given") == "given");
    ::setenv("NELASTIC_OUT_DIR", "from_env", 1);
    CHECK(resolve_out_dir("") == "from_env");
    CHECK(resolve_out_dir("given") == "given");
    ::unsetenv("NELASTIC_OUT_DIR");
    CHECK(resolve_out_dir("") == "nelastic-out");
}

TEST_CASE("metastable run on a v-table and validate", "[harness]") {
    RunRequest req;
    req.command = "metastable";
    req.vtable_text = read_file(source_path("fixtures/four_well.vt"));
    req.branch = "0.3,0.6,0.7";
    req.out_dir = scratch("meta").string();
    const RunResult r = run_command(req);
    const std::string tl = read_file((fs::path(req.out_dir) / "timeline.csv").string());
    CHECK(std::count(tl.begin(), tl.end(), '\n') == 8);
    CHECK(tl.find("\n7,inf,0,0,1,0\n") != std::string::npos);
    CHECK(r.summary_json.find("cycles") != std::string::npos);

    req.command = "validate";
    req.out_dir = scratch("validate").string();
    const RunResult v = run_command(req);
    CHECK_FALSE(v.checks_failed);

    RunRequest bad;
    bad.command = "simulate";
    bad.out_dir = scratch("bad").string();
    CHECK(error_kind([&] { (void)run_command(bad); }) == ErrorKind::Usage);
    bad.command = "frobnicate";
    bad.config_text = kMinimal;
    CHECK(error_kind([&] { (void)run_command(bad); }) == ErrorKind::Usage);
}
