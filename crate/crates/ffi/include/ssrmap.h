/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SSRMAP_H
#define SSRMAP_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result of every fallible call.
typedef enum SsrmStatus {
  SSRM_STATUS_OK = 0,
  SSRM_STATUS_NULL_POINTER = 1,
  SSRM_STATUS_INVALID_ARGUMENT = 2,
  SSRM_STATUS_INVALID_UTF8 = 3,
  SSRM_STATUS_IO = 4,
  SSRM_STATUS_PARSE = 5,
  SSRM_STATUS_DIMENSION = 6,
  SSRM_STATUS_NUMERIC = 7,
  SSRM_STATUS_CORRUPT = 8,
  SSRM_STATUS_MODEL_MISMATCH = 9,
  SSRM_STATUS_NO_POSITIVES = 10,
  SSRM_STATUS_PANIC = 11,
} SsrmStatus;

// Fitted caption model.
typedef struct SsrmCodec SsrmCodec;

// Compressed map with its retrieval vectors precomputed.
typedef struct SsrmMap SsrmMap;

// Trained projection network.
typedef struct SsrmModel SsrmModel;

// Bytes owned by the library. Release with [`ssrm_buffer_free`].
typedef struct SsrmBuffer {
  uint8_t *data;
  size_t len;
} SsrmBuffer;

// One ranked map element.
typedef struct SsrmHit {
  size_t index;
  double similarity;
} SsrmHit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *ssrm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ssrm_version(void);

// Releases a buffer returned by this library. Passing an empty buffer is a no-op.
void ssrm_buffer_free(struct SsrmBuffer buf);

// Fits a context model of the given order on `count` NUL-terminated lines.
enum SsrmStatus ssrm_codec_fit(const char *const *lines,
                               size_t count,
                               size_t order,
                               struct SsrmCodec **out_codec);

// Loads a codec model serialized by [`ssrm_codec_to_bytes`] or `ssrmap fit-codec`.
enum SsrmStatus ssrm_codec_from_bytes(const uint8_t *data,
                                      size_t len,
                                      struct SsrmCodec **out_codec);

enum SsrmStatus ssrm_codec_from_file(const char *path, struct SsrmCodec **out_codec);

enum SsrmStatus ssrm_codec_to_bytes(const struct SsrmCodec *codec, struct SsrmBuffer *out_buf);

void ssrm_codec_free(struct SsrmCodec *codec);

// Compresses arbitrary bytes into a self-describing blob.
enum SsrmStatus ssrm_codec_encode(const struct SsrmCodec *codec,
                                  const uint8_t *data,
                                  size_t len,
                                  struct SsrmBuffer *out_blob);

// Restores the bytes of a blob produced by [`ssrm_codec_encode`] with the same model.
enum SsrmStatus ssrm_codec_decode(const struct SsrmCodec *codec,
                                  const uint8_t *blob,
                                  size_t len,
                                  struct SsrmBuffer *out_data);

enum SsrmStatus ssrm_model_from_bytes(const uint8_t *data,
                                      size_t len,
                                      struct SsrmModel **out_model);

enum SsrmStatus ssrm_model_from_file(const char *path, struct SsrmModel **out_model);

void ssrm_model_free(struct SsrmModel *model);

// Input embedding dimension, or 0 for a null handle.
size_t ssrm_model_input_dim(const struct SsrmModel *model);

// Output dimension (the largest usable prefix), or 0 for a null handle.
size_t ssrm_model_output_dim(const struct SsrmModel *model);

// Writes the first `c` components of the projected `image` to `out_prefix`,
// which must hold `c` doubles.
enum SsrmStatus ssrm_model_project(const struct SsrmModel *model,
                                   const double *image,
                                   size_t dim,
                                   size_t c,
                                   double *out_prefix);

enum SsrmStatus ssrm_map_from_bytes(const uint8_t *data, size_t len, struct SsrmMap **out_map);

enum SsrmStatus ssrm_map_from_file(const char *path, struct SsrmMap **out_map);

enum SsrmStatus ssrm_map_to_bytes(const struct SsrmMap *map, struct SsrmBuffer *out_buf);

void ssrm_map_free(struct SsrmMap *map);

// Number of stored elements, or 0 for a null handle.
size_t ssrm_map_len(const struct SsrmMap *map);

// Stored prefix length; 0 means the map holds captions only.
size_t ssrm_map_dims(const struct SsrmMap *map);

// Mean stored bytes per element, optionally with the header spread over all elements.
enum SsrmStatus ssrm_map_bytes_per_element(const struct SsrmMap *map,
                                           bool amortize_header,
                                           double *out_bytes);

// UTF-8 id of element `index` (not NUL-terminated).
enum SsrmStatus ssrm_map_element_id(const struct SsrmMap *map,
                                    size_t index,
                                    struct SsrmBuffer *out_id);

// Decoded UTF-8 caption of element `index` (not NUL-terminated).
enum SsrmStatus ssrm_map_caption(const struct SsrmMap *map,
                                 size_t index,
                                 struct SsrmBuffer *out_caption);

// Ranks the map against a query image embedding and caption.
//
// The query is compressed the same way as the stored elements. `model` may be
// null only for caption-only maps, in which case `image` is ignored. At most
// `capacity` hits are written to `out_hits`, best first, and their number to
// `out_count`.
enum SsrmStatus ssrm_map_query(const struct SsrmMap *map,
                               const struct SsrmModel *model,
                               const double *image,
                               size_t dim,
                               const char *caption,
                               struct SsrmHit *out_hits,
                               size_t capacity,
                               size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSRMAP_H */
