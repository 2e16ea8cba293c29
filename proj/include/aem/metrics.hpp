#pragma once

#include "aem/image.hpp"

namespace aem::metrics {

/// All values over the trimap's unknown region. Reported scales: SAD, Grad
/// and Conn divided by 1000, MSE multiplied by 1000.
struct MetricReport {
  double sad = 0, mse = 0, grad = 0, conn = 0;
  Index unknown_pixels = 0;
  // No pixel is opaque in both mattes, so connectivity degenerates to a
  // thresholded absolute difference.
  bool conn_fallback = false;
};

/// Sum |alpha - gt| over unknown pixels / 1000. Throws ShapeError on size mismatch.
double sad(const Plane& alpha, const Plane& gt, const Trimap& trimap);
/// Mean (alpha - gt)^2 over unknown pixels * 1000; 0 for an empty region.
double mse(const Plane& alpha, const Plane& gt, const Trimap& trimap);

/// Gaussian first-derivative filters, sigma 1.4, radius ceil(3 sigma),
/// normalized to unit L2 norm, replicate borders. Returns |grad| per pixel.
Plane gradient_magnitude(const Plane& p, double sigma = 1.4);
/// Sum over unknown pixels of (|grad alpha| - |grad gt|)^2 / 1000.
double grad_metric(const Plane& alpha, const Plane& gt, const Trimap& trimap);

struct ConnResult {
  double value = 0;
  bool fallback = false;
};

/// Connectivity error with thresholds 0.1..1.0 in steps of 0.1, 4-connectivity,
/// tolerance 0.15. Omega at each threshold is the largest component of
/// {alpha >= t} and {gt >= t} jointly; ties go to the component whose first
/// pixel comes first in row-major order.
ConnResult conn_metric_full(const Plane& alpha, const Plane& gt, const Trimap& trimap);
double conn_metric(const Plane& alpha, const Plane& gt, const Trimap& trimap);

MetricReport evaluate(const Plane& alpha, const Plane& gt, const Trimap& trimap);

/// Mean of each field across reports (fallback true if any report fell back).
MetricReport mean_report(const std::vector<MetricReport>& reports);

}  // namespace aem::metrics
