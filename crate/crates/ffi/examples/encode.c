/* Encodes one table of a run config and prints the first embedding.
 *
 *   cc examples/encode.c -Iinclude -L../../target/debug -lrelate_ffi -lm -o encode
 *   LD_LIBRARY_PATH=../../target/debug ./encode ../core/examples/configs/encode.json users
 */
#include <stdio.h>
#include <stdlib.h>

#include "relate.h"

int main(int argc, char **argv) {
  if (argc != 3) {
    fprintf(stderr, "usage: %s CONFIG TABLE\n", argv[0]);
    return 2;
  }
  RelateSession *session = NULL;
  if (relate_session_open(argv[1], &session) != RELATE_STATUS_OK) {
    fprintf(stderr, "error: %s\n", relate_last_error());
    return 1;
  }
  size_t dim = 0, rows = 0, needed = 0;
  relate_session_dim(session, &dim);
  if (relate_session_rows(session, argv[2], &rows) != RELATE_STATUS_OK) {
    fprintf(stderr, "error: %s\n", relate_last_error());
    relate_session_free(session);
    return 1;
  }
  relate_session_encode(session, argv[2], NULL, 0, &needed);
  double *z = malloc(needed * sizeof(double));
  RelateStatus status = relate_session_encode(session, argv[2], z, needed, &needed);
  if (status == RELATE_STATUS_OK) {
    printf("relate %s: %zu rows x %zu dims\n", relate_version(), rows, dim);
    for (size_t j = 0; j < dim; j++) printf("%s%.6f", j ? " " : "", z[j]);
    printf("\n");
  } else {
    fprintf(stderr, "error: %s\n", relate_last_error());
  }
  free(z);
  relate_session_free(session);
  return status == RELATE_STATUS_OK ? 0 : 1;
}
