#include <cstdio>

int main() {
  std::puts("se3conv: CLI not wired up yet");
  return 1;
}
