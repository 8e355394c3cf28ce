#pragma once

#include <span>
#include <vector>

#include "ate/diff/tape.hpp"

namespace ate::diff {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a (m x n) plus a 1 x n row broadcast over every row.
Var add_row(Var a, Var row);
// a (m x n) times a m x 1 column broadcast over every column.
Var mul_col(Var a, Var col);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var relu(Var a);
Var silu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var square(Var a);

Var sum(Var a);   // 1 x 1
Var mean(Var a);  // 1 x 1
// Per-row sum, m x 1.
Var row_sum(Var a);

// Row-wise layer normalization with affine gamma/beta (1 x n each).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Scaled dot-product attention, batched along rows.
// q: (groups*tq) x c, k and v: (groups*tk) x c. Heads split the columns;
// scores are scaled by 1/sqrt(c / heads).
Var attention(Var q, Var k, Var v, int groups, int heads);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Gather rows by index (repeats allowed); backward scatter-adds.
Var select_rows(Var x, std::vector<int> indices);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
// Row-major reshape preserving element order.
Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);

}  // namespace ate::diff
