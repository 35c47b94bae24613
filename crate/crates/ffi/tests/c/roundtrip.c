#include <math.h>
#include <stdio.h>
#include <string.h>

#include "itsbench.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            const char *err = its_last_error();                        \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,    \
                    #cond, err ? err : "no error");                    \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    ItsCam cam = its_cam_default();
    cam.station_id = 42;
    cam.latitude_tenth_udeg = 446500000;
    cam.longitude_tenth_udeg = 109300000;
    cam.speed_cmps = 1389;

    uint8_t buf[64];
    size_t written = 0;
    CHECK(its_frame_encode_cam(&cam, 1000, buf, sizeof buf, &written) == ITS_STATUS_OK);
    CHECK(written == 23 + its_cam_len());

    ItsCam back;
    CHECK(its_frame_decode_cam(buf, written, &back) == ITS_STATUS_OK);
    CHECK(back.station_id == 42 && back.speed_cmps == 1389);
    CHECK(back.latitude_tenth_udeg == cam.latitude_tenth_udeg);
    CHECK(back.longitude_tenth_udeg == cam.longitude_tenth_udeg);

    CHECK(its_cam_encode(&cam, buf, 4, &written) == ITS_STATUS_BUFFER_TOO_SMALL);
    CHECK(its_last_error() != NULL);

    double loss = 0.0;
    CHECK(its_free_space_loss_db(1.0, 5.9e9, &loss) == ITS_STATUS_OK);
    CHECK(fabs(loss - 47.8648) < 1e-3);
    CHECK(its_free_space_loss_db(0.0, 5.9e9, &loss) == ITS_STATUS_INVALID_ARGUMENT);

    ItsLdm *ldm = its_ldm_new();
    uint32_t outcome = 9;
    CHECK(its_ldm_upsert_cam(ldm, &cam, 5000, &outcome) == ITS_STATUS_OK && outcome == 0);
    CHECK(its_ldm_len(ldm) == 1);
    char *json = NULL;
    CHECK(its_ldm_query_area_json(ldm, 44.65, 10.93, 10.0, 5000, &json) == ITS_STATUS_OK);
    CHECK(strstr(json, "\"station_id\":42") != NULL);
    its_string_free(json);
    its_ldm_free(ldm);

    puts("ok");
    return 0;
}
