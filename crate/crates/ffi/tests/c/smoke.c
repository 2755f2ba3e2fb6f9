#include <math.h>
#include <stdio.h>
#include <string.h>

#include "harvest.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    HarvestModel *model = NULL;
    CHECK(harvest_model_fix1(&model) == HARVEST_STATUS_OK);

    HarvestConstants c;
    CHECK(harvest_model_constants(model, &c) == HARVEST_STATUS_OK);
    CHECK(fabs(c.x_tilde - 0.375) < 1e-12);

    HarvestPortrait *portrait = NULL;
    CHECK(harvest_portrait_build(model, &portrait) == HARVEST_STATUS_OK);

    HarvestRegion region;
    CHECK(harvest_classify(portrait, c.x_star, c.k_star, &region) == HARVEST_STATUS_OK);
    CHECK(region == HARVEST_REGION_SINGULAR_POINT);

    double j = 0.0;
    CHECK(harvest_value(portrait, c.x_star, c.k_star, 40.0, &j) == HARVEST_STATUS_OK);
    CHECK(fabs(j + 0.1461596389) < 1e-9);

    char *schedule = NULL;
    char *csv = NULL;
    CHECK(harvest_simulate(portrait, 0.1, 0.3, 40.0, 0.1, &schedule, &csv) == HARVEST_STATUS_OK);
    CHECK(strstr(schedule, "\"Moratorium\"") != NULL);
    CHECK(strncmp(csv, "t,x,K,u,z,lambda,J_running", 26) == 0);
    harvest_string_free(schedule);
    harvest_string_free(csv);

    CHECK(harvest_value(portrait, 1.5, 0.5, 40.0, &j) == HARVEST_STATUS_UNSUPPORTED);
    CHECK(strlen(harvest_last_error()) > 0);
    CHECK(harvest_value(NULL, 0.5, 0.5, 40.0, &j) == HARVEST_STATUS_NULL_POINTER);

    harvest_portrait_free(portrait);
    harvest_model_free(model);
    puts("ok");
    return 0;
}
