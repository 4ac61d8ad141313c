"""Метрики интерпретируемости, отчёты и визуализация."""
