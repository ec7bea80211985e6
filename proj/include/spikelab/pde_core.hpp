#pragma once

#include "grid.hpp"
#include "newton.hpp"
#include "sparse.hpp"
