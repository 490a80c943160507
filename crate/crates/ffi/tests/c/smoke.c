#include <math.h>
#include <stdio.h>
#include <string.h>

#include "robust_se.h"

int main(int argc, char **argv) {
    double e[3] = {1.0, 2.0, 100.0};
    double v = 0.0;
    if (rse_aggregate(e, 3, 1, 1, "SAMPLE_MEDIAN_TF_MEAN", 0.25, &v) != RSE_STATUS_OK || v != 2.0) {
        fprintf(stderr, "aggregate: %f\n", v);
        return 1;
    }
    if (rse_aggregate(e, 3, 1, 1, "nope", 0.25, &v) != RSE_STATUS_CONFIG || rse_last_error() == NULL) {
        return 2;
    }
    RseModel *m = NULL;
    if (rse_model_load("/nonexistent.ckpt", &m) != RSE_STATUS_LOAD || m != NULL) {
        return 3;
    }
    if (argc > 1) {
        if (rse_model_load(argv[1], &m) != RSE_STATUS_OK) {
            fprintf(stderr, "%s\n", rse_last_error());
            return 4;
        }
        double x[4000], y[4000];
        for (int i = 0; i < 4000; i++) x[i] = 0.1 * sin(0.05 * i);
        size_t n = rse_model_outputs(m);
        if (n != 1 || rse_model_enhance(m, x, 4000, 16000, y, 4000) != RSE_STATUS_OK) {
            return 5;
        }
        if (rse_si_sdr(y, x, 4000, &v) != RSE_STATUS_OK || !isfinite(v)) {
            return 6;
        }
        rse_model_free(m);
    }
    printf("ok %s\n", rse_version());
    return 0;
}
