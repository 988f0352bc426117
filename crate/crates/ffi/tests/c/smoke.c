#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fracpi.h"

#define CHECK(call)                                                      \
    do {                                                                 \
        FpStatus s_ = (call);                                            \
        if (s_ != FP_STATUS_OK) {                                        \
            fprintf(stderr, "%s: status %d: %s\n", #call, (int)s_,       \
                    fp_last_error());                                    \
            return 1;                                                    \
        }                                                                \
    } while (0)

int main(void) {
    const double num_c[] = {1.01}, num_e[] = {0.0};
    const double den_c[] = {1.0, 1.367, 0.001025}, den_e[] = {0.0, 1.0, 2.0};
    FpPlant *plant = NULL;
    CHECK(fp_plant_from_terms(num_c, num_e, 1, den_c, den_e, 3, &plant));

    FpController fo = {2.5732, 1.45204, 1.2};
    FpStabilityReport st;
    CHECK(fp_stability(plant, &fo, 100, &st));
    if (!st.stable || st.root_count != 16) return 2;

    FpSimConfig cfg = fp_sim_config_default();
    cfg.horizon = 2.0;
    cfg.setpoint_final = 1.0;
    FpTrace *trace = NULL;
    CHECK(fp_simulate(plant, &fo, &cfg, &trace));
    size_t n = fp_trace_len(trace);
    double *y = malloc(n * sizeof *y);
    CHECK(fp_trace_copy(trace, FP_SIGNAL_OUTPUT, y, n));
    printf("samples=%zu y_end=%.6f\n", n, y[n - 1]);
    free(y);
    fp_trace_free(trace);

    FpRelayConfig rc = fp_relay_config_default();
    rc.horizon = 0.1;
    FpRelayResult rr;
    if (fp_relay_experiment(plant, &rc, &rr) != FP_STATUS_HORIZON_TOO_SHORT) return 3;
    printf("error=%s\n", fp_last_error());

    fp_plant_free(plant);
    return 0;
}
