# Tests for edgeseg
