#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "isoguide/latent.hpp"

namespace isoguide {

// Half-open pixel box [x0, x1) x [y0, y1).
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    long area() const { return static_cast<long>(x1 - x0) * static_cast<long>(y1 - y0); }
    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
    std::string label;
    double confidence = 0.0;
    BBox bbox;
};

void validate_bbox(const BBox& b, int height, int width);
void validate_detection(const Detection& d, int height, int width);

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

// Midpoint with round-half-up.
Point bbox_center(const BBox& b);
// Same, clamped into the image so degenerate edge boxes stay in bounds.
Point bbox_center(const BBox& b, int height, int width);

Mask rasterize_bbox(const BBox& b, int height, int width);

struct BleedPolicy {
    std::vector<std::string> expected_labels;  // multiset
    double confidence_threshold = 0.5;

    void validate() const;
};

enum class BleedReason { missing_label, low_confidence, extra_subject };

struct BleedFinding {
    BleedReason reason;
    std::string label;
};

// consistent iff every expected label (with multiplicity) is covered by a
// detection of that label whose confidence is >= the threshold. Findings list
// missing and low-confidence labels first, then unmatched confident
// detections (informational only).
struct BleedVerdict {
    bool consistent = false;
    std::vector<BleedFinding> findings;

    std::string summary() const;
};

BleedVerdict bleed_check(const std::vector<Detection>& detections, const BleedPolicy& policy);

std::string to_string(BleedReason r);

// Pixels claimed by several masks go to the earliest entry of `priority`.
std::vector<Mask> resolve_overlaps(const std::vector<Mask>& masks,
                                   const std::vector<std::size_t>& priority);

// Indices ordered by confidence, highest first; ties keep input order.
std::vector<std::size_t> confidence_priority(const std::vector<Detection>& detections);

struct SubjectRegion {
    std::size_t subject = 0;      // index into the subject prompt list
    std::size_t mask_source = 0;  // index of the detection/mask assigned
    Mask mask;
};

struct SubjectLayout {
    std::vector<SubjectRegion> subjects;  // ordered by subject index

    std::size_t size() const { return subjects.size(); }
    Mask union_mask() const;
    void validate(const Shape& latent_shape, std::size_t n_subjects) const;
};

// (subject index, mask index) pairs; explicit pairs win over matching.
using AssignmentOverride = std::vector<std::pair<std::size_t, std::size_t>>;

AssignmentOverride parse_assignment(const std::string& text);  // "0:1,1:0"

// Default: a detection matches a subject prompt when its label occurs in the
// prompt (case-insensitive); the highest-confidence unused match wins. Masks
// are then made disjoint by confidence priority.
SubjectLayout assign_masks(const std::vector<Detection>& detections,
                           const std::vector<Mask>& masks,
                           const std::vector<std::string>& subject_prompts,
                           const AssignmentOverride& override_pairs = {});

// Positional assignment for user-provided masks: mask i -> subject i unless
// overridden; overlap priority follows file order.
SubjectLayout layout_from_masks(const std::vector<Mask>& masks, std::size_t n_subjects,
                                const AssignmentOverride& override_pairs = {});

// Client side of the perception sidecar (/v1/detect, /v1/segment).
class SidecarClient {
public:
    explicit SidecarClient(std::string endpoint,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30));

    const std::string& endpoint() const { return endpoint_; }

    std::vector<Detection> detect(const Latent& image) const;
    std::vector<Mask> segment(const Latent& image, const std::vector<Point>& points) const;
    std::string health() const;

private:
    std::string post(const std::string& path, const std::string& body) const;

    std::string endpoint_;
    std::chrono::milliseconds timeout_;
};

// Request bodies, exposed so golden fixtures can pin them byte-for-byte.
std::string make_detect_request(const Latent& image);
std::string make_segment_request(const Latent& image, const std::vector<Point>& points);
std::vector<Detection> parse_detect_response(const std::string& body, int height, int width);
std::vector<Mask> parse_segment_response(const std::string& body, int height, int width,
                                         std::size_t n_points);

}  // namespace isoguide
