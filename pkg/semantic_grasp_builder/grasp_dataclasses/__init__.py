"""Grasp dataset rows, configuration models and their file formats"""
