// Acceptance suite placeholder; assembled after module bring-up.
#include <cstdio>
int main() {
  std::puts("acceptance suite not yet assembled");
  return 1;
}
