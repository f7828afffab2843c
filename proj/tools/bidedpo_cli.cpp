// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>

int main() {
    std::printf("cli placeholder\n");
    return 1;
}
