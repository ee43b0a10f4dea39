/* The public header must compile as plain C. */
#include <stdio.h>

#include "agft/agft.h"

int main(void) {
  agft_config* c = NULL;
  if (agft_config_default(&c) != AGFT_OK) return 1;
  char hash[17];
  agft_status s = agft_config_hash(c, hash, sizeof hash);
  agft_config_free(c);
  if (s != AGFT_OK) return 1;
  printf("agft %s config %s\n", agft_version(), hash);
  return 0;
}
