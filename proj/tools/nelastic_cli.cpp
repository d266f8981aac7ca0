#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nelastic.h"

namespace {

int report_failure(nel_status st) {
    static const char* names[] = {"ok", "usage", "config", "hypothesis", "numeric", "invariant", "io", "internal"};
    std::fprintf(stderr, "nelastic: %s error: %s\n", names[st], nel_last_error());
    return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nearly-elastic multi-well systems: simulation, averaging, branching, rates, metastability"};
    app.set_version_flag("--version", nel_version());
    app.require_subcommand(1);
    app.fallthrough();

    std::string config, vtable, out, method, branch, manifest;
    std::optional<std::uint64_t> seed, replicas;
    std::optional<double> epsilon;
    unsigned workers = 0;
    bool as_json = false;

    app.add_option("--config", config, "config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "64-bit master seed");
    app.add_option("--out", out, "output directory (default: $NELASTIC_OUT_DIR or nelastic-out)");
    app.add_option("--replicas", replicas, "number of replicas");
    app.add_option("--epsilon", epsilon, "kick scale epsilon");
    app.add_option("--method", method, "branching estimator")->check(CLI::IsMember({"mc", "ladder", "grid"}));
    app.add_option("--v-table", vtable, "V-table file (metastable, validate)")->check(CLI::ExistingFile);
    app.add_option("--branch", branch, "p_left per interior vertex, ascending id: p,p,...");
    app.add_option("--workers", workers, "worker threads (0 = all cores)");
    app.add_flag("--json", as_json, "print the result summary as JSON");

    const char* commands[][2] = {
        {"simulate", "run microscopic replicas and record energy trajectories"},
        {"average", "compare replicas with the averaged motion on the graph"},
        {"branching", "estimate branching probabilities at interior vertices"},
        {"rate", "Hamiltonians, adjacent quasi-potentials and their closure"},
        {"rare", "rare-event probabilities and large-deviation slopes"},
        {"metastable", "cycle hierarchy and metastable timeline"},
        {"validate", "run the invariant suite"},
    };
    for (const auto& c : commands) app.add_subcommand(c[0], c[1]);
    auto* rerun = app.add_subcommand("rerun", "re-run a manifest and verify byte-identical outputs");
    rerun->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    nel_set_workers(workers);

    nel_result* res = nullptr;
    nel_status st = NEL_OK;
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "rerun") {
        st = nel_rerun(manifest.c_str(), out.empty() ? nullptr : out.c_str(), &res);
    } else {
        nel_request* req = nullptr;
        st = nel_request_new(name.c_str(), &req);
        if (st == NEL_OK && !config.empty()) st = nel_request_set_config_file(req, config.c_str());
        if (st == NEL_OK && !vtable.empty()) st = nel_request_set_vtable_file(req, vtable.c_str());
        if (st == NEL_OK && seed) st = nel_request_set_seed(req, *seed);
        if (st == NEL_OK && replicas) st = nel_request_set_replicas(req, *replicas);
        if (st == NEL_OK && epsilon) st = nel_request_set_epsilon(req, *epsilon);
        if (st == NEL_OK && !method.empty()) st = nel_request_set_method(req, method.c_str());
        if (st == NEL_OK && !branch.empty()) st = nel_request_set_branch(req, branch.c_str());
        if (st == NEL_OK && !out.empty()) st = nel_request_set_out_dir(req, out.c_str());
        if (st == NEL_OK) st = nel_run(req, &res);
        nel_request_free(req);
    }
    if (res != nullptr) {
        std::fputs(as_json ? nel_result_json(res) : nel_result_text(res), stdout);
        if (as_json) std::fputs("\n", stdout);
        std::fprintf(stderr, "manifest: %s\n", nel_result_manifest_path(res));
        nel_result_free(res);
    }
    if (st != NEL_OK) return report_failure(st);
    return 0;
}
