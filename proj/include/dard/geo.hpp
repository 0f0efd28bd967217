#ifndef DARD_GEO_HPP
#define DARD_GEO_HPP

#include <cmath>

namespace dard::geo {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }

// Great-circle distance in kilometers.
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    const double dlat = deg2rad(lat2 - lat1);
    const double dlon = deg2rad(lon2 - lon1);
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(deg2rad(lat1)) * std::cos(deg2rad(lat2)) *
                         std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

// Squared equirectangular distance in degrees, longitude scaled by
// cos(mean latitude). Monotone-equivalent to geodesic distance at city
// extents; used for k-means only.
inline double equirect_sq(double lat1, double lon1, double lat2, double lon2) {
    const double mlat = deg2rad((lat1 + lat2) / 2);
    const double dx = (lon2 - lon1) * std::cos(mlat);
    const double dy = lat2 - lat1;
    return dx * dx + dy * dy;
}

}  // namespace dard::geo

#endif  // DARD_GEO_HPP
