#pragma once

// Eigen include point. Small products otherwise take a coefficient-wise path whose
// vectorized reductions peel to memory alignment, making the last bits depend on heap layout.
// The packed GEMM kernel does not, so it is forced for every size.

#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif

#include <Eigen/Core>
#include <Eigen/Geometry>

#if EIGEN_GEMM_TO_COEFFBASED_THRESHOLD != 0
#error "repast needs EIGEN_GEMM_TO_COEFFBASED_THRESHOLD=0; include repast headers before Eigen or define it globally"
#endif
