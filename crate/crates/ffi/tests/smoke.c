#include <stdio.h>
#include <string.h>

#include "semmap.h"

int main(void) {
    SemmapDataset *ds = NULL;
    SemmapLabels *labels = NULL;
    int32_t cls = 0;
    int rc;

    if (semmap_dataset_synth("street", 3, 100, 0.1, 1, &ds) != SEMMAP_OK) {
        fprintf(stderr, "synth: %s\n", semmap_last_error());
        return 1;
    }
    if (semmap_label(ds, SEMMAP_MODE_TCL_STEREO, 3.0, 7, &labels) != SEMMAP_OK) {
        fprintf(stderr, "label: %s\n", semmap_last_error());
        return 1;
    }
    rc = semmap_labels_get(labels, semmap_labels_len(labels), &cls);
    if (rc != SEMMAP_ERR_OUT_OF_RANGE || strstr(semmap_last_error(), "out of range") == NULL) {
        fprintf(stderr, "unexpected status %d\n", rc);
        return 1;
    }
    printf("%zu %zu\n", semmap_dataset_point_count(ds), semmap_labels_len(labels));
    semmap_labels_free(labels);
    semmap_dataset_free(ds);
    return 0;
}
