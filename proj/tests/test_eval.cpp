#include "astlm/eval.hpp"
#include "doctest.h"
