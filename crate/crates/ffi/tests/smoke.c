#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "glmsparse.h"

int main(void) {
    enum { M = 120, N = 3 };
    double data[M * N];
    for (int k = 0; k < M * N; k++) data[k] = (double)((k * 37) % 101) / 50.0 - 1.0;

    GlmMatrix *a = NULL;
    GlmFamily *f = NULL;
    GlmSparsifier *sp = NULL;
    if (glm_matrix_from_dense(data, M, N, &a) != GLM_STATUS_OK) return 1;
    if (glm_family_create("huber", NAN, M, &f) != GLM_STATUS_OK) return 2;
    if (glm_sparsify(a, f, 0.5, 1.0, 100.0, 7, &sp) != GLM_STATUS_OK) {
        fprintf(stderr, "%s\n", glm_last_error());
        return 3;
    }
    size_t len = glm_sparsifier_len(sp);
    size_t *idx = malloc(len * sizeof *idx);
    double *w = malloc(len * sizeof *w);
    if (glm_sparsifier_copy(sp, idx, w, len) != GLM_STATUS_OK) return 4;
    printf("version %s kept %zu rows, first weight %.6f\n", glm_version(), len, w[0]);
    free(idx);
    free(w);
    glm_sparsifier_free(sp);
    glm_family_free(f);
    glm_matrix_free(a);
    return len > 0 ? 0 : 5;
}
