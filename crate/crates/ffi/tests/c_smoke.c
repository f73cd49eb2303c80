#include <stdio.h>
#include "alf.h"

int main(void) {
    AlfGridSpec g = {-102.4, 102.4, -38.4, 38.4, 0.4, 0.4};
    size_t h = 0, w = 0;
    if (alf_grid_dims(&g, &h, &w) != ALF_STATUS_OK || h != 512 || w != 192) return 1;
    AlfSchema *s = NULL;
    if (alf_schema_new(&g, 8, 20, &s) != ALF_STATUS_OK) return 2;
    AlfBox b[1] = {{1.0, 2.0, 1.9, 4.6, 0.1, 0.9}};
    unsigned char buf[120];
    size_t n = 0;
    if (alf_encode(s, b, 1, buf, sizeof buf, &n) != ALF_STATUS_OK || n != 120) return 3;
    AlfBox out[20];
    size_t count = 0;
    if (alf_decode(s, buf, 60, NULL, out, 20, &count) != ALF_STATUS_DECODE) return 4;
    if (alf_last_error_message() == NULL) return 5;
    if (alf_decode(s, buf, n, NULL, out, 20, &count) != ALF_STATUS_OK || count != 1) return 6;
    alf_schema_free(s);
    printf("ok %s\n", alf_version());
    return 0;
}
