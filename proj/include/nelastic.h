#ifndef NELASTIC_H
#define NELASTIC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define NEL_API __declspec(dllexport)
#else
#define NEL_API __attribute__((visibility("default")))
#endif

/* Status codes double as process exit codes for the CLI. */
typedef enum nel_status {
    NEL_OK = 0,
    NEL_ERR_USAGE = 1,
    NEL_ERR_CONFIG = 2,
    NEL_ERR_HYPOTHESIS = 3,
    NEL_ERR_NUMERIC = 4,
    NEL_ERR_INVARIANT = 5,
    NEL_ERR_IO = 6,
    NEL_ERR_INTERNAL = 7
} nel_status;

typedef struct nel_request nel_request;
typedef struct nel_result nel_result;
typedef struct nel_system nel_system;
typedef struct nel_vtable nel_vtable;

NEL_API const char* nel_version(void);
/* Message of the last failing call on this thread ("" if none). */
NEL_API const char* nel_last_error(void);
/* 0 = hardware concurrency. */
NEL_API void nel_set_workers(unsigned workers);

/* Run requests: one subcommand plus its inputs and flags. */
NEL_API nel_status nel_request_new(const char* command, nel_request** out);
NEL_API void nel_request_free(nel_request* req);
NEL_API nel_status nel_request_set_config_file(nel_request* req, const char* path);
NEL_API nel_status nel_request_set_config_text(nel_request* req, const char* text);
NEL_API nel_status nel_request_set_vtable_file(nel_request* req, const char* path);
NEL_API nel_status nel_request_set_vtable_text(nel_request* req, const char* text);
NEL_API nel_status nel_request_set_seed(nel_request* req, uint64_t seed);
NEL_API nel_status nel_request_set_replicas(nel_request* req, uint64_t replicas);
NEL_API nel_status nel_request_set_epsilon(nel_request* req, double epsilon);
NEL_API nel_status nel_request_set_method(nel_request* req, const char* method);
NEL_API nel_status nel_request_set_branch(nel_request* req, const char* list);
NEL_API nel_status nel_request_set_out_dir(nel_request* req, const char* dir);

/* Writes outputs and manifest.json. A validate run with failing checks
   returns NEL_ERR_INVARIANT and still fills *out. */
NEL_API nel_status nel_run(const nel_request* req, nel_result** out);
/* Re-runs a manifest into out_dir (NULL: default directory) and checks the
   outputs are byte-identical to the recorded hashes. */
NEL_API nel_status nel_rerun(const char* manifest_path, const char* out_dir, nel_result** out);

NEL_API void nel_result_free(nel_result* res);
NEL_API const char* nel_result_text(const nel_result* res);
NEL_API const char* nel_result_json(const nel_result* res);
NEL_API const char* nel_result_manifest_path(const nel_result* res);
NEL_API size_t nel_result_output_count(const nel_result* res);
NEL_API const char* nel_result_output_name(const nel_result* res, size_t index);
NEL_API uint64_t nel_result_output_hash(const nel_result* res, size_t index);

/* Direct access to a parsed well system. */
NEL_API nel_status nel_system_load(const char* config_text, nel_system** out);
NEL_API void nel_system_free(nel_system* sys);
NEL_API int nel_system_edge_count(const nel_system* sys);
NEL_API nel_status nel_system_cumulant(const nel_system* sys, int edge, double beta, double* value);
/* Adjacent quasi-potential between vertices; +inf when unreachable. */
NEL_API nel_status nel_system_quasipotential(const nel_system* sys, int from, int to, double* value);

/* V-tables and their cycle exponents. */
NEL_API nel_status nel_vtable_parse(const char* text, nel_vtable** out);
NEL_API void nel_vtable_free(nel_vtable* vt);
NEL_API int nel_vtable_exterior_count(const nel_vtable* vt);
/* Exit exponent of the singleton cycle of the k-th exterior vertex (0-based). */
NEL_API nel_status nel_vtable_singleton_exponent(const nel_vtable* vt, int k, double* value);

#ifdef __cplusplus
}
#endif

#endif
