#pragma once

#include <cmath>

#include "lumitrack/common.hpp"

namespace lumitrack {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct GeoCoord {
    double lat = 0.0;  // degrees, [-90, 90]
    double lon = 0.0;  // degrees, [-180, 180]

    friend bool operator==(const GeoCoord&, const GeoCoord&) = default;
};

inline bool valid_coord(const GeoCoord& c) {
    return std::isfinite(c.lat) && std::isfinite(c.lon) && c.lat >= -90.0 &&
           c.lat <= 90.0 && c.lon >= -180.0 && c.lon <= 180.0;
}

inline void require_coord(const GeoCoord& c) {
    if (!valid_coord(c)) throw input_error("coordinate out of range");
}

// central angle between two points, radians
inline double central_angle(const GeoCoord& a, const GeoCoord& b) {
    const double la = deg2rad(a.lat), lb = deg2rad(b.lat);
    const double dlat = lb - la;
    const double dlon = deg2rad(b.lon - a.lon);
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(la) * std::cos(lb) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * std::asin(std::min(1.0, std::sqrt(h)));
}

inline double haversine_km(const GeoCoord& a, const GeoCoord& b) {
    return kEarthRadiusKm * central_angle(a, b);
}

inline double great_circle_deg(const GeoCoord& a, const GeoCoord& b) {
    return rad2deg(central_angle(a, b));
}

}  // namespace lumitrack
