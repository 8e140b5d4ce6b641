#include <stdio.h>
#include "fockscope.h"

int main(void) {
    FsState *state = NULL;
    FsBatch *batch = NULL;
    FsReconstruction *recon = NULL;
    double probs[5];
    char msg[256];
    if (fs_state_heralded(0.016, 0.07, 0.5787, 4, &state) != FS_STATUS_OK) return 1;
    if (fs_batch_sample(state, 20000, 7, &batch) != FS_STATUS_OK) return 1;
    if (fs_reconstruct(batch, 4, 1e-8, 2000, &recon) != FS_STATUS_OK) return 1;
    if (fs_recon_sigma(recon, probs, 5) != FS_STATUS_OK) return 1;
    if (fs_state_new(NULL, 3, NULL) != FS_STATUS_NULL_POINTER) return 1;
    fs_last_error(msg, sizeof msg);
    printf("%s %s %d\n", fs_version(), msg, (int)fs_recon_converged(recon));
    fs_recon_free(recon);
    fs_batch_free(batch);
    fs_state_free(state);
    return 0;
}
