#include <catch2/catch_amalgamated.hpp>
#include "flmm/flmm.hpp"
