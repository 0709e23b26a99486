#include <iostream>

#include "grbsde/selftest.hpp"

int main() { return grbsde::run_selftest(std::cout); }
