"""Test suite for physid"""
