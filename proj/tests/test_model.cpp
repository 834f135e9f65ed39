#include "astlm/model.hpp"
#include "doctest.h"
