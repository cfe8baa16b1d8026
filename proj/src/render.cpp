#include "crowdfm/render.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <variant>

namespace crowdfm::render {

Eigen::MatrixX2d to_world(const Eigen::MatrixX2d& ego, const scene::Pose& pose) {
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  Eigen::MatrixX2d out(ego.rows(), 2);
  for (long i = 0; i < ego.rows(); ++i) {
    out(i, 0) = pose.x + c * ego(i, 0) - s * ego(i, 1);
    out(i, 1) = pose.y + s * ego(i, 0) + c * ego(i, 1);
  }
  return out;
}

namespace {

class Canvas {
 public:
  Canvas(const std::array<double, 4>& bounds, double px_per_m) : b_(bounds), k_(px_per_m) {}

  double width() const { return (b_[2] - b_[0]) * k_; }
  double height() const { return (b_[3] - b_[1]) * k_; }
  double x(double wx) const { return (wx - b_[0]) * k_; }
  double y(double wy) const { return (b_[3] - wy) * k_; }  // SVG y grows downward
  double len(double m) const { return m * k_; }

 private:
  std::array<double, 4> b_;
  double k_;
};

void polyline(std::ostringstream& s, const Canvas& cv, const Eigen::MatrixX2d& xy, const char* stroke,
              double width, double opacity) {
  s << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\" stroke-opacity=\""
    << opacity << "\" points=\"";
  char buf[64];
  for (long i = 0; i < xy.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", cv.x(xy(i, 0)), cv.y(xy(i, 1)));
    s << buf;
  }
  s << "\"/>\n";
}

}  // namespace

std::string frame_svg(const Frame& f) {
  if (!f.world) throw Error(ErrorKind::kInvalidInput, "frame has no world");
  const Canvas cv(f.world->bounds, 30.0);
  std::ostringstream s;
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                cv.width(), cv.height());
  s << buf;

  for (const auto& shape : f.world->static_shapes) {
    if (const auto* r = std::get_if<scene::Rect>(&shape)) {
      std::snprintf(buf, sizeof(buf), "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#555\"/>\n",
                    cv.x(r->lo.x()), cv.y(r->hi.y()), cv.len(r->hi.x() - r->lo.x()), cv.len(r->hi.y() - r->lo.y()));
    } else {
      const auto& c = std::get<scene::Circle>(shape);
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"#555\"/>\n",
                    cv.x(c.center.x()), cv.y(c.center.y()), cv.len(c.radius));
    }
    s << buf;
  }

  if (f.scenario) {
    const double c = std::cos(f.robot.theta), sn = std::sin(f.robot.theta);
    for (int i = 0; i < f.scenario->pointcloud_len; ++i) {
      const auto& p = f.scenario->pointcloud[static_cast<size_t>(i)];
      const double wx = f.robot.x + c * p[0] - sn * p[1], wy = f.robot.y + sn * p[0] + c * p[1];
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.5\" fill=\"#c33\"/>\n", cv.x(wx), cv.y(wy));
      s << buf;
    }
    for (int i = 0; i < f.scenario->dyn_len; ++i) {
      const auto& o = f.scenario->dyn_obstacles[static_cast<size_t>(i)];
      const double wx = f.robot.x + c * o[0] - sn * o[1], wy = f.robot.y + sn * o[0] + c * o[1];
      const double vx = c * o[2] - sn * o[3], vy = sn * o[2] + c * o[3];
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"#f4b183\" stroke=\"#b85\"/>\n"
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#b85\"/>\n",
                    cv.x(wx), cv.y(wy), cv.len(0.3), cv.x(wx), cv.y(wy), cv.x(wx + vx), cv.y(wy + vy));
      s << buf;
    }
  }

  for (size_t i = 0; i < f.candidates.size(); ++i) {
    if (static_cast<int>(i) == f.selected) continue;
    polyline(s, cv, to_world(f.candidates[i], f.robot), "#999", 1.5, 0.8);
  }
  if (f.selected >= 0 && f.selected < static_cast<int>(f.candidates.size())) {
    polyline(s, cv, to_world(f.candidates[static_cast<size_t>(f.selected)], f.robot), "#1a7f37", 3.0, 1.0);
  }

  const Eigen::Vector2d g = f.world->robot_goal;
  std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"6\" fill=\"none\" stroke=\"#1a7f37\" stroke-width=\"2\"/>\n",
                cv.x(g.x()), cv.y(g.y()));
  s << buf;
  std::snprintf(buf, sizeof(buf),
                "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"#2b7bb9\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"white\" stroke-width=\"2\"/>\n",
                cv.x(f.robot.x), cv.y(f.robot.y), cv.len(f.robot_radius), cv.x(f.robot.x), cv.y(f.robot.y),
                cv.x(f.robot.x + f.robot_radius * std::cos(f.robot.theta)),
                cv.y(f.robot.y + f.robot_radius * std::sin(f.robot.theta)));
  s << buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"8\" y=\"16\">step %d  t=%.1f s</text>\n</svg>\n", f.step, f.time);
  s << buf;
  return s.str();
}

}  // namespace crowdfm::render
