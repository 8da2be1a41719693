#pragma once

#include <array>
#include <string>
#include <vector>

#include "recon/rng.hpp"
#include "recon/vec3.hpp"

namespace recon {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Vec3> normals;  // optional, per vertex

    bool empty() const { return vertices.empty() || faces.empty(); }
    double face_area(size_t f) const;
    double surface_area() const;
    void drop_degenerate_faces(double min_area = 1e-14);
    void validate() const;  // face indices in range
};

// Centers the vertex centroid at the origin and scales so max |v| = 1.
TriangleMesh normalize_unit_sphere(const TriangleMesh& mesh);

void save_obj(const std::string& path, const TriangleMesh& mesh);
TriangleMesh load_obj(const std::string& path);

// ASCII PLY point cloud with optional normals / sdf columns.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;   // empty or same length
    std::vector<double> sdf;     // empty or same length
};
void save_ply(const std::string& path, const PointCloud& cloud);
PointCloud load_ply(const std::string& path);

enum class PrimKind { kSphere, kBox, kRoundedBox, kTorus, kCapsule, kUnion };

// Exact signed distance primitives in their local frame, composed with a
// rigid pose + uniform scale. Union takes the min of children; that is the
// exact distance everywhere outside child overlaps, so generators keep
// children disjoint.
struct AnalyticSdf {
    PrimKind kind = PrimKind::kSphere;
    Vec3 params{0.5, 0, 0};  // sphere: r | box/rounded: half extents | torus: (R, r) | capsule: (half_h, r)
    double round_radius = 0.05;
    Vec3 translation{0, 0, 0};
    Mat3 rotation = Mat3::identity();
    double scale = 1.0;
    std::vector<AnalyticSdf> children;  // union only
    bool lower_bound_only = false;      // set for unions with overlapping children

    double eval(const Vec3& p) const;
    Vec3 gradient(const Vec3& p, double h = 1e-6) const;  // central differences of eval
    double surface_area_local() const;                    // in the local (unscaled) frame
    double bounding_radius() const;                       // max |p| over the surface, posed

    static AnalyticSdf sphere(double r);
    static AnalyticSdf box(Vec3 half_extents);
    static AnalyticSdf rounded_box(Vec3 half_extents, double round_r);
    static AnalyticSdf torus(double major_r, double minor_r);
    static AnalyticSdf capsule(double half_height, double r);
    static AnalyticSdf union_of(std::vector<AnalyticSdf> children);
};

// On-surface sample set with exact normals, off-surface with exact distances.
struct SdfSampleSet {
    std::vector<Vec3> on_surface;
    std::vector<Vec3> on_normals;
    std::vector<Vec3> off_surface;
    std::vector<double> off_sdf;
};

// Area-uniform samples on the zero level set; |sdf| < 1e-6 at every sample
// and normals are the normalized analytic gradient.
void sample_surface(const AnalyticSdf& sdf, int64_t count, Rng rng, SdfSampleSet& out);

// 50% uniform in [-1,1]^3, 50% near-surface Gaussian (sigma 0.05), all inside
// [-1,1]^3, each with the exact signed distance.
void sample_off_surface(const AnalyticSdf& sdf, int64_t count, Rng rng, SdfSampleSet& out);

SdfSampleSet sample_shape(const AnalyticSdf& sdf, int64_t on_count, int64_t off_count, Rng rng);

}  // namespace recon
