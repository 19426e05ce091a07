#ifndef FEDPROV_H
#define FEDPROV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 0 to 16 match the `fedprov` command's exit codes.
typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_INTERNAL = 1,
  FP_STATUS_USAGE = 2,
  FP_STATUS_UNAUTHORIZED = 3,
  FP_STATUS_UNKNOWN_PID = 4,
  FP_STATUS_LEDGER_REJECTED = 5,
  FP_STATUS_INVALID_DOCUMENT = 6,
  FP_STATUS_ILLEGAL_UPDATE = 7,
  FP_STATUS_IO = 8,
  FP_STATUS_NODE_UNREACHABLE = 9,
  FP_STATUS_MISMATCH = 10,
  FP_STATUS_NOT_INVALIDATED = 11,
  FP_STATUS_SUCCESSOR_EXISTS = 12,
  FP_STATUS_INTEGRITY = 13,
  FP_STATUS_ALREADY_EXISTS = 14,
  FP_STATUS_IDENTITY = 15,
  FP_STATUS_NOT_PERMITTED = 16,
  FP_STATUS_NULL_ARGUMENT = 17,
  FP_STATUS_INVALID_UTF8 = 18,
} FpStatus;

typedef enum FpUpdateClass {
  FP_UPDATE_CLASS_ENRICHMENT = 0,
  FP_UPDATE_CLASS_DECOMPOSITION = 1,
  FP_UPDATE_CLASS_GENERAL_REVISION = 2,
  FP_UPDATE_CLASS_ILLEGAL = 3,
} FpUpdateClass;

// A connected client acting as one identity.
typedef struct FpClient FpClient;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The last error message on this thread, or null. Valid until the next
// failing call on the same thread; do not free it.
const char *fp_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void fp_string_free(char *s);

// Library version as a static string.
const char *fp_version(void);

// Hex SHA-256 of `len` bytes at `data`.
//
// # Safety
// `data` must point to `len` readable bytes (or be null with `len` 0).
enum FpStatus fp_checksum_hex(const uint8_t *data, size_t len, char **out);

// Classifies the revision of provenance document `old_json` into
// `new_json`. Illegal revisions are reported through `out_class`, not as
// an error; the reasons are left in the last error message.
//
// # Safety
// String arguments must be valid NUL-terminated strings.
enum FpStatus fp_classify_update(const char *old_json,
                                 const char *new_json,
                                 enum FpUpdateClass *out_class);

// Verifies the hash chain and signatures of a ledger file. Returns
// `Integrity` and the lowest faulty height in `out_fault_height` when the
// chain is broken; on success `out_fault_height` is set to -1.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out_fault_height` may be null.
enum FpStatus fp_verify_ledger_file(const char *path, int64_t *out_fault_height);

// Opens a client for `identity` (user@org) on the federation described by
// the config file. With `embedded` the node files are opened in-process;
// otherwise the nodes are reached over TCP.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be writable.
enum FpStatus fp_client_open(const char *config_path,
                             const char *identity,
                             bool embedded,
                             struct FpClient **out);

// Closes a client. Null is ignored.
//
// # Safety
// `client` must come from [`fp_client_open`] and not have been freed already.
void fp_client_free(struct FpClient *client);

// Verifies `pid` and writes the JSON report to `out`. A checksum mismatch
// returns `Mismatch` and still writes the report.
//
// # Safety
// `client` must be open, `pid` a valid NUL-terminated string, `out` writable.
enum FpStatus fp_client_verify(const struct FpClient *client, const char *pid, char **out);

// Writes every lineage path from artifact `pid` to its sources as JSON.
//
// # Safety
// As for [`fp_client_verify`].
enum FpStatus fp_client_trace(const struct FpClient *client, const char *pid, char **out);

// Writes the PID record of `pid` as JSON.
//
// # Safety
// As for [`fp_client_verify`].
enum FpStatus fp_client_resolve(const struct FpClient *client, const char *pid, char **out);

// Writes the ledger value stored under `pid` as JSON.
//
// # Safety
// As for [`fp_client_verify`].
enum FpStatus fp_client_read(const struct FpClient *client, const char *pid, char **out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FEDPROV_H */
