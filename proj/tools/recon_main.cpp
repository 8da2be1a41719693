#include <cstdio>

int main() {
    std::puts("recon: pipeline CLI (subcommands land with the pipeline module)");
    return 0;
}
