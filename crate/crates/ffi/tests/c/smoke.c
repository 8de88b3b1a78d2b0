#include <math.h>
#include <stdio.h>
#include <string.h>

#include "concept_coherence.h"

/* Square corners: MDS must reproduce the input distances. */
int main(void) {
    const double pts[8] = {0, 0, 1, 0, 1, 1, 0, 1};
    CcConfiguration *c = NULL, *e = NULL;
    CcDissimilarity *d = NULL, *d2 = NULL;
    double r2 = 0, back[16], orig[16];
    char *newick = NULL;

    if (cc_configuration_new(pts, 4, 2, &c) != CC_STATUS_OK) return 1;
    if (cc_distance_matrix(c, &d) != CC_STATUS_OK) return 2;
    if (cc_classical_mds(d, 2, &e) != CC_STATUS_OK) return 3;
    if (cc_procrustes_r2(c, e, &r2) != CC_STATUS_OK || fabs(r2 - 1.0) > 1e-9) return 4;
    if (cc_distance_matrix(e, &d2) != CC_STATUS_OK) return 5;
    cc_dissimilarity_copy(d, orig, 16);
    cc_dissimilarity_copy(d2, back, 16);
    for (int i = 0; i < 16; i++)
        if (fabs(orig[i] - back[i]) > 1e-9) return 6;
    if (cc_dendrogram_newick(d, CC_LINKAGE_AVERAGE, &newick) != CC_STATUS_OK) return 7;
    if (newick[strlen(newick) - 1] != ';') return 8;
    printf("%s\n", newick);
    cc_string_free(newick);

    if (cc_classical_mds(d, 9, &e) != CC_STATUS_INVALID_ARGUMENT) return 9;
    char *msg = cc_last_error_message();
    if (msg == NULL) return 10;
    cc_string_free(msg);

    cc_configuration_free(c);
    cc_configuration_free(e);
    cc_dissimilarity_free(d);
    cc_dissimilarity_free(d2);
    return 0;
}
