#include "astlm/train.hpp"
#include "doctest.h"
