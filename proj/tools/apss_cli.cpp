#include "apss/cli.hpp"

int main(int argc, char** argv) { return apss::cli::run(argc, argv); }
