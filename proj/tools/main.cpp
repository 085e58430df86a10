#include "mealrec/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mealrec::cli::run(argc, argv, std::cout, std::cerr); }
