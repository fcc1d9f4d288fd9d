/* Build: cc smoke.c -I../include -L../../../target/release -l:libmirid_ffi.a -lm -lpthread -ldl */
#include <stdio.h>
#include <stdlib.h>

#include "mirid.h"

static int check(MiridStatus s) {
    if (s != MIRID_STATUS_OK) {
        fprintf(stderr, "mirid error %d: %s\n", (int)s, mirid_last_error());
        exit(1);
    }
    return 0;
}

int main(void) {
    const char *cfg = "[acquisition]\nny = 32\nnx = 32\nncoils = 4\n";
    MiridDataset *ds = NULL;
    MiridModel *sense = NULL;
    MiridDims dims;
    check(mirid_dataset_simulate(cfg, 1, &ds));
    check(mirid_dataset_dims(ds, &dims));
    check(mirid_model_untrained(MIRID_METHOD_SENSE, cfg, dims.nshots, 1, &sense));

    size_t n = dims.ny * dims.nx;
    double *img = malloc(n * sizeof(double));
    double *truth = malloc(n * sizeof(double));
    double err = 0.0;
    check(mirid_reconstruct(sense, ds, 1, img, n));
    check(mirid_dataset_truth(ds, 1, truth, n));
    check(mirid_nrmse(img, truth, n, &err));
    printf("%zu volumes, %zux%zu, CG-SENSE NRMSE on volume 1: %.2f%%\n", dims.volumes, dims.ny, dims.nx, err);

    free(img);
    free(truth);
    mirid_model_free(sense);
    mirid_dataset_free(ds);
    return 0;
}
