"""Line bundle mean curvature flow simulator and verification lab."""
