/* Builds an icosphere, renders its silhouette and reports coverage.
 *
 *   cargo build --release -p mcmr-ffi
 *   cc -std=c99 -Icrates/ffi/include crates/ffi/examples/icosphere.c \
 *      -Ltarget/release -lmcmr_ffi -o icosphere
 *   LD_LIBRARY_PATH=target/release ./icosphere
 */
#include <stdio.h>
#include <stdlib.h>

#include "mcmr.h"

#define SIZE 32

int main(void) {
    McmrMesh *mesh = NULL;
    if (mcmr_mesh_icosphere(3, &mesh) != MCMR_STATUS_OK) {
        fprintf(stderr, "icosphere: %s\n", mcmr_last_error());
        return 1;
    }
    /* scale, tx, ty, qw, qx, qy, qz */
    double pose[7] = {0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0};
    double *mask = malloc(sizeof(double) * SIZE * SIZE);
    McmrStatus s = mcmr_render_silhouette(mesh, pose, SIZE, 1e-5, mask, SIZE * SIZE);
    if (s != MCMR_STATUS_OK) {
        fprintf(stderr, "render: %s\n", mcmr_last_error());
        return 1;
    }
    double covered = 0.0;
    for (int i = 0; i < SIZE * SIZE; i++) covered += mask[i];
    printf("%zu vertices, %zu faces, coverage %.3f\n", mcmr_mesh_num_vertices(mesh),
           mcmr_mesh_num_faces(mesh), covered / (SIZE * SIZE));

    /* Errors come back as codes with a message. */
    double bad[7] = {0.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0};
    s = mcmr_render_silhouette(mesh, bad, SIZE, 1e-5, mask, SIZE * SIZE);
    printf("non-unit quaternion -> status %d\n", (int)s);

    free(mask);
    mcmr_mesh_free(mesh);
    return 0;
}
