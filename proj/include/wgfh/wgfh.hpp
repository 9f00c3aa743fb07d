#ifndef WGFH_WGFH_HPP
#define WGFH_WGFH_HPP

#include "wgfh/cell_problem.hpp"
#include "wgfh/edi.hpp"
#include "wgfh/error.hpp"
#include "wgfh/expr.hpp"
#include "wgfh/fp_solver.hpp"
#include "wgfh/gamma.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/media.hpp"
#include "wgfh/metric.hpp"
#include "wgfh/parallel.hpp"
#include "wgfh/quadrature.hpp"

#endif  // WGFH_WGFH_HPP
