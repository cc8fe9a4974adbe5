#include <math.h>
#include <stdio.h>
#include "rehab.h"

static int check(int ok, const char *what) {
    if (!ok) {
        const char *msg = rehab_last_error();
        fprintf(stderr, "FAIL %s: %s\n", what, msg ? msg : "(no message)");
    }
    return ok ? 0 : 1;
}

int main(void) {
    int failures = 0;
    double x[2] = {0.0, 5.0}, y[1] = {10.0}, sx[2], sy[1];
    failures += check(rehab_scale_to_range(x, 2, y, 1, sx, sy) == REHAB_STATUS_OK, "scale");
    failures += check(fabs(sx[0] - 1.0) < 1e-12 && fabs(sx[1] - 10.5) < 1e-12 && fabs(sy[0] - 20.0) < 1e-12, "scale values");

    double a[2] = {2.0}, b[1] = {1.0}, sd = 0.0;
    failures += check(rehab_separation_degree(b, 1, a, 1, &sd) == REHAB_STATUS_OK, "separation");
    failures += check(fabs(sd + 1.0 / 3.0) < 1e-12, "separation value");

    double bad[1] = {-1.0};
    failures += check(rehab_separation_degree(bad, 1, a, 1, &sd) == REHAB_STATUS_DATA, "domain status");
    failures += check(rehab_last_error() != NULL, "error message");

    RehabScoring *s = NULL;
    double ref[4] = {1.0, 2.0, 3.0, 4.0}, score = 0.0;
    failures += check(rehab_scoring_new(ref, 4, 3.2, 10.0, &s) == REHAB_STATUS_OK, "scoring_new");
    failures += check(rehab_score_reference(s, 1.0, &score) == REHAB_STATUS_OK && score > 0.0 && score < 1.0, "score");
    rehab_scoring_free(s);

    failures += check(rehab_dtw(NULL, 2, y, 1, 1, &sd) == REHAB_STATUS_NULL_POINTER, "null check");
    printf("%s %d\n", rehab_version(), failures);
    return failures;
}
