#include <math.h>
#include <stdio.h>
#include "kdb.h"

int main(void) {
    const double x[] = {0.5, 1.2, 0.9, 1.5, -0.2, 1.6, -1.1, 0.7};
    const double t[] = {1, 1, 1, 1, 0, 0, 0, 0};
    const double y[] = {3.0, 4.5, 2.5, 5.0, 1.0, 0.5, 2.0, 1.5};
    KdbDataset *ds = NULL;
    KdbWeights *w = NULL;
    double est = NAN;
    if (kdb_dataset_new(x, 8, 1, t, y, &ds) != KDB_STATUS_OK) return 1;
    if (kdb_solve_weights(ds, KDB_KERNEL_SCHEME_KDM1, KDB_TARGET_ATE, 0.0, 0.0, &w) != KDB_STATUS_OK) return 2;
    if (kdb_estimate(ds, w, &est) != KDB_STATUS_OK || !isfinite(est)) return 3;
    if (kdb_estimate(NULL, w, &est) != KDB_STATUS_NULL_POINTER) return 4;
    if (kdb_last_error_message()[0] == '\0') return 5;
    printf("%s %.6f\n", kdb_version(), est);
    kdb_weights_free(w);
    kdb_dataset_free(ds);
    return 0;
}
