# Test package for DELTA
