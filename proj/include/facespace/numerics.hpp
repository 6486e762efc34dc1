#pragma once

// Numeric kernels shared by every analysis: PCA/SVD, pseudo-inverse,
// correlation, F-distribution tail and one-way ANOVA.

#include "facespace/linalg.hpp"
#include "facespace/matrix.hpp"
#include "facespace/stats.hpp"
