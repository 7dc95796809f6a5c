#include <cstdio>
int main() { std::puts("gridclip (subcommands pending)"); return 0; }
