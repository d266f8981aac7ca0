#include "nelastic.h"

#include <exception>
#include <memory>
#include <new>
#include <string>

#include "error.hpp"
#include "harness.hpp"
#include "kernels.hpp"
#include "meta.hpp"
#include "parallel.hpp"
#include "rate.hpp"
#include "topology.hpp"

struct nel_request {
    nelastic::RunRequest req;
};

struct nel_result {
    nelastic::RunResult res;
};

struct nel_system {
    nelastic::Config cfg;
    nelastic::WellGraph graph;
};

struct nel_vtable {
    nelastic::VertexTree tree;
    nelastic::CycleReport report;
};

namespace {

thread_local std::string last_error;

nel_status status_of(nelastic::ErrorKind k) { return static_cast<nel_status>(static_cast<int>(k)); }

template <class F>
nel_status guard(F&& f) {
    try {
        last_error.clear();
        return f();
    } catch (const nelastic::Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return NEL_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return NEL_ERR_INTERNAL;
    }
}

nel_status null_arg(const char* what) {
    last_error = std::string("null argument: ") + what;
    return NEL_ERR_USAGE;
}

nel_status finish(nelastic::RunResult r, nel_result** out) {
    const bool failed = r.checks_failed;
    *out = new nel_result{std::move(r)};
    if (failed) {
        last_error = "invariant checks failed";
        return NEL_ERR_INVARIANT;
    }
    return NEL_OK;
}

}  // namespace

extern "C" {

const char* nel_version(void) { return nelastic::kVersion; }

const char* nel_last_error(void) { return last_error.c_str(); }

void nel_set_workers(unsigned workers) { nelastic::set_worker_count(workers); }

nel_status nel_request_new(const char* command, nel_request** out) {
    if (!command) return null_arg("command");
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new nel_request{};
        (*out)->req.command = command;
        return NEL_OK;
    });
}

void nel_request_free(nel_request* req) { delete req; }

#define NEL_REQ_SETTER(name, type, body)                    \
    nel_status name(nel_request* req, type value) {         \
        if (!req) return null_arg("req");                   \
        return guard([&] {                                  \
            body;                                           \
            return NEL_OK;                                  \
        });                                                 \
    }

NEL_REQ_SETTER(nel_request_set_config_file, const char*,
               if (!value) return null_arg("path"); req->req.config_text = nelastic::read_file(value))
NEL_REQ_SETTER(nel_request_set_config_text, const char*,
               if (!value) return null_arg("text"); req->req.config_text = value)
NEL_REQ_SETTER(nel_request_set_vtable_file, const char*,
               if (!value) return null_arg("path"); req->req.vtable_text = nelastic::read_file(value))
NEL_REQ_SETTER(nel_request_set_vtable_text, const char*,
               if (!value) return null_arg("text"); req->req.vtable_text = value)
NEL_REQ_SETTER(nel_request_set_seed, uint64_t, req->req.seed = value)
NEL_REQ_SETTER(nel_request_set_replicas, uint64_t, req->req.replicas = value)
NEL_REQ_SETTER(nel_request_set_epsilon, double, req->req.epsilon = value)
NEL_REQ_SETTER(nel_request_set_method, const char*,
               if (!value) return null_arg("method"); req->req.method = std::string(value))
NEL_REQ_SETTER(nel_request_set_branch, const char*,
               if (!value) return null_arg("list"); req->req.branch = std::string(value))
NEL_REQ_SETTER(nel_request_set_out_dir, const char*,
               if (!value) return null_arg("dir"); req->req.out_dir = value)

#undef NEL_REQ_SETTER

nel_status nel_run(const nel_request* req, nel_result** out) {
    if (!req) return null_arg("req");
    if (!out) return null_arg("out");
    return guard([&] { return finish(nelastic::run_command(req->req), out); });
}

nel_status nel_rerun(const char* manifest_path, const char* out_dir, nel_result** out) {
    if (!manifest_path) return null_arg("manifest_path");
    if (!out) return null_arg("out");
    return guard([&] {
        return finish(nelastic::rerun_manifest(manifest_path, out_dir ? out_dir : ""), out);
    });
}

void nel_result_free(nel_result* res) { delete res; }

const char* nel_result_text(const nel_result* res) { return res ? res->res.summary_text.c_str() : ""; }

const char* nel_result_json(const nel_result* res) { return res ? res->res.summary_json.c_str() : ""; }

const char* nel_result_manifest_path(const nel_result* res) { return res ? res->res.manifest_path.c_str() : ""; }

size_t nel_result_output_count(const nel_result* res) { return res ? res->res.outputs.size() : 0; }

const char* nel_result_output_name(const nel_result* res, size_t index) {
    if (!res || index >= res->res.outputs.size()) return nullptr;
    return res->res.outputs[index].file.c_str();
}

uint64_t nel_result_output_hash(const nel_result* res, size_t index) {
    if (!res || index >= res->res.outputs.size()) return 0;
    return res->res.outputs[index].hash;
}

nel_status nel_system_load(const char* config_text, nel_system** out) {
    if (!config_text) return null_arg("config_text");
    if (!out) return null_arg("out");
    return guard([&] {
        auto sys = std::make_unique<nel_system>();
        sys->cfg = nelastic::parse_config(config_text);
        sys->graph = nelastic::build_graph(sys->cfg.system);
        *out = sys.release();
        return NEL_OK;
    });
}

void nel_system_free(nel_system* sys) { delete sys; }

int nel_system_edge_count(const nel_system* sys) { return sys ? sys->graph.edge_count() : 0; }

nel_status nel_system_cumulant(const nel_system* sys, int edge, double beta, double* value) {
    if (!sys) return null_arg("sys");
    if (!value) return null_arg("value");
    return guard([&] {
        if (!sys->cfg.has_kicks) nelastic::fail(nelastic::ErrorKind::Config, "system has no [kicks] section");
        *value = nelastic::cumulant(sys->graph.edge(edge).kicks, beta);
        return NEL_OK;
    });
}

nel_status nel_system_quasipotential(const nel_system* sys, int from, int to, double* value) {
    if (!sys) return null_arg("sys");
    if (!value) return null_arg("value");
    return guard([&] {
        if (!sys->cfg.has_kicks) nelastic::fail(nelastic::ErrorKind::Config, "system has no [kicks] section");
        *value = nelastic::adjacent_quasipotential(sys->graph, from, to);
        return NEL_OK;
    });
}

nel_status nel_vtable_parse(const char* text, nel_vtable** out) {
    if (!text) return null_arg("text");
    if (!out) return null_arg("out");
    return guard([&] {
        auto vt = std::make_unique<nel_vtable>();
        vt->tree = nelastic::parse_vtable(text);
        vt->report = nelastic::cycle_hierarchy(vt->tree);
        *out = vt.release();
        return NEL_OK;
    });
}

void nel_vtable_free(nel_vtable* vt) { delete vt; }

int nel_vtable_exterior_count(const nel_vtable* vt) {
    return vt ? static_cast<int>(vt->report.states.size()) : 0;
}

nel_status nel_vtable_singleton_exponent(const nel_vtable* vt, int k, double* value) {
    if (!vt) return null_arg("vt");
    if (!value) return null_arg("value");
    if (k < 0 || k >= static_cast<int>(vt->report.states.size())) {
        last_error = "exterior index out of range";
        return NEL_ERR_USAGE;
    }
    *value = vt->report.cycles[static_cast<std::size_t>(k)].c;
    last_error.clear();
    return NEL_OK;
}

}  // extern "C"
