"""Tests for cprstab"""
