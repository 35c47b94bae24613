#ifndef ITSBENCH_H
#define ITSBENCH_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ItsStatus {
  ITS_STATUS_OK = 0,
  ITS_STATUS_NULL_POINTER = 1,
  ITS_STATUS_INVALID_ARGUMENT = 2,
  ITS_STATUS_DECODE = 3,
  ITS_STATUS_ENCODE = 4,
  ITS_STATUS_BUFFER_TOO_SMALL = 5,
  ITS_STATUS_PANIC = 99,
} ItsStatus;

/**
 * Opaque thread-safe LDM store.
 */
typedef struct ItsLdm ItsLdm;

/**
 * Opaque emission mask.
 */
typedef struct ItsMask ItsMask;

/**
 * Opaque PSD estimate.
 */
typedef struct ItsPsd ItsPsd;

/**
 * Flat CAM fields in wire units.
 */
typedef struct ItsCam {
  uint8_t protocol_version;
  uint8_t message_id;
  uint32_t station_id;
  uint16_t generation_delta_time;
  int32_t latitude_tenth_udeg;
  int32_t longitude_tenth_udeg;
  int32_t altitude_cm;
  uint16_t speed_cmps;
  uint16_t heading_tenth_deg;
  uint8_t station_type;
} ItsCam;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *its_last_error(void);

void its_string_free(char *s);

/**
 * Default CAM header values (version 2, message id 2), all else zero.
 */
struct ItsCam its_cam_default(void);

/**
 * Encodes a CAM payload. `*written` receives the required size even when
 * the buffer is too small.
 */
enum ItsStatus its_cam_encode(const struct ItsCam *cam,
                              uint8_t *out,
                              size_t out_len,
                              size_t *written);

enum ItsStatus its_cam_decode(const uint8_t *data, size_t len, struct ItsCam *out);

/**
 * Wraps a CAM in a single-hop broadcast frame.
 */
enum ItsStatus its_frame_encode_cam(const struct ItsCam *cam,
                                    uint64_t timestamp_ms,
                                    uint8_t *out,
                                    size_t out_len,
                                    size_t *written);

/**
 * Decodes a frame and the CAM it carries.
 */
enum ItsStatus its_frame_decode_cam(const uint8_t *data, size_t len, struct ItsCam *out);

size_t its_cam_len(void);

enum ItsStatus its_free_space_loss_db(double distance_m, double fc_hz, double *out);

/**
 * Two-ray ground reflection loss; `+inf` at exact nulls.
 */
enum ItsStatus its_two_ray_loss_db(double distance_m,
                                   double h_tx_m,
                                   double h_rx_m,
                                   double fc_hz,
                                   double reflection_coeff,
                                   double *out);

enum ItsStatus its_haversine_distance_m(double lat1,
                                        double lon1,
                                        double lat2,
                                        double lon2,
                                        double *out);

/**
 * Average power in dBm of `n_samples` interleaved I/Q volt samples.
 */
enum ItsStatus its_average_power_dbm(const double *iq,
                                     size_t n_samples,
                                     double impedance_ohm,
                                     double *out);

enum ItsStatus its_psd_compute(const double *iq,
                               size_t n_samples,
                               size_t n_fft,
                               double fs_hz,
                               double fc_hz,
                               double impedance_ohm,
                               struct ItsPsd **out);

size_t its_psd_len(const struct ItsPsd *psd);

/**
 * Copies up to `len` bins of frequency (Hz) and PSD (dBm/Hz).
 */
enum ItsStatus its_psd_copy(const struct ItsPsd *psd,
                            double *freqs_hz,
                            double *psd_dbm_per_hz,
                            size_t len);

void its_psd_free(struct ItsPsd *psd);

/**
 * Parses mask text (`offset_hz limit_dbm_per_hz` per line).
 */
enum ItsStatus its_mask_parse(const char *text, struct ItsMask **out);

void its_mask_free(struct ItsMask *mask);

/**
 * Checks a PSD against a mask. `*report_json` receives the full report;
 * free it with `its_string_free`. Pass NULL to skip it.
 */
enum ItsStatus its_mask_check(const struct ItsPsd *psd,
                              const struct ItsMask *mask,
                              bool *compliant,
                              size_t *violations,
                              char **report_json);

struct ItsLdm *its_ldm_new(void);

void its_ldm_free(struct ItsLdm *ldm);

size_t its_ldm_len(const struct ItsLdm *ldm);

/**
 * Inserts or refreshes the entry for a received CAM. `*outcome` is 0 for
 * inserted, 1 for updated, 2 when the stored entry was newer.
 */
enum ItsStatus its_ldm_upsert_cam(const struct ItsLdm *ldm,
                                  const struct ItsCam *cam,
                                  uint64_t rx_time_ms,
                                  uint32_t *outcome);

/**
 * Removes entries older than `max_age_ms` at `now_ms`.
 */
enum ItsStatus its_ldm_purge(const struct ItsLdm *ldm,
                             uint64_t now_ms,
                             uint64_t max_age_ms,
                             size_t *removed);

/**
 * Entries within `radius_m` of a point as a JSON array, in the same
 * object format as the TCP API with ages relative to `now_ms`. Free the
 * string with `its_string_free`.
 */
enum ItsStatus its_ldm_query_area_json(const struct ItsLdm *ldm,
                                       double lat,
                                       double lon,
                                       double radius_m,
                                       uint64_t now_ms,
                                       char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ITSBENCH_H */
