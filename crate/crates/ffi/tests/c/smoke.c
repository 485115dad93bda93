/* Exercises the public header from C: fit, encode, decode, error reporting. */
#include <stdio.h>
#include <string.h>

#include "ssrmap.h"

static int check(int cond, const char *what) {
    if (!cond) {
        fprintf(stderr, "smoke: %s (last error: %s)\n", what, ssrm_last_error_message());
    }
    return cond ? 0 : 1;
}

int main(void) {
    const char *lines[] = {
        "a quiet street with a red door",
        "a busy street with a blue door",
        "a quiet park with a red bench",
    };
    const char *text = "a quiet street with a blue bench";
    SsrmCodec *codec = NULL;
    SsrmBuffer blob = {0}, back = {0};
    int failures = 0;

    failures += check(ssrm_codec_fit(lines, 3, 3, &codec) == SSRM_STATUS_OK, "fit");
    failures += check(ssrm_codec_encode(codec, (const uint8_t *)text, strlen(text), &blob) == SSRM_STATUS_OK, "encode");
    failures += check(ssrm_codec_decode(codec, blob.data, blob.len, &back) == SSRM_STATUS_OK, "decode");
    failures += check(back.len == strlen(text) && memcmp(back.data, text, back.len) == 0, "round trip");

    SsrmStatus s = ssrm_codec_decode(codec, blob.data, 3, &back);
    failures += check(s == SSRM_STATUS_CORRUPT, "truncated blob rejected");
    failures += check(strlen(ssrm_last_error_message()) > 0, "error message set");
    failures += check(ssrm_codec_fit(lines, 3, 3, NULL) == SSRM_STATUS_NULL_POINTER, "null out pointer");
    failures += check(ssrm_map_len(NULL) == 0, "null map length");

    printf("version %s, %zu -> %zu bytes\n", ssrm_version(), strlen(text), blob.len);
    ssrm_buffer_free(blob);
    ssrm_buffer_free(back);
    ssrm_codec_free(codec);
    return failures;
}
