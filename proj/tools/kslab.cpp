#include <cstdio>
int main() { std::puts("kslab placeholder"); return 0; }
