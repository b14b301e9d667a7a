# Test package for channel-tail-rate-selection
