#pragma once

// Deliberately naive reference implementations for metric and kernel checks.

#include <vector>

#include "adyolo/detector/detector.hpp"
#include "adyolo/eval/metrics.hpp"

namespace testsupport {

// Direct nested-loop convolution, HWC input, [K, K, Cin, Cout] kernel.
adyolo::Tensor brute_conv(const adyolo::Tensor& input, const adyolo::Tensor& kernel, int stride, int pad);

// Corner-form overlap arithmetic.
double brute_iou(const adyolo::Box& a, const adyolo::Box& b);

// Repeatedly takes the best remaining detection and discards same-class
// neighbours above the threshold.
std::vector<adyolo::detector::DecodedAnchor> brute_nms(std::vector<adyolo::detector::DecodedAnchor> dets, double thr);

// Enumerates the ranked match sequence, builds every (recall, precision)
// prefix and integrates the upper envelope step by step.
double brute_ap(const std::vector<adyolo::eval::ScoredDetection>& dets, const std::vector<adyolo::eval::TruthBox>& truths,
                double iou_threshold);

}  // namespace testsupport
