// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace numlens::svg {

struct Line {
  std::string name;
  std::vector<std::optional<double>> y;  // gaps break the polyline
};

/// Static line chart over x = 1..n. Output is a pure function of the inputs.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Line>& lines);

}  // namespace numlens::svg
