from io import BytesIO

import pandas as pd

from scanner import Report

FINDING_COLUMNS = ['Class', 'Endpoint', 'Payload', 'Severity', 'Confidence',
                   'Baseline Status', 'Attack Status', 'Attack Latency (ms)']


def findings_frame(report: Report) -> pd.DataFrame:
    rows = [{
        'Class': f.attack_class.value,
        'Endpoint': f.endpoint,
        'Payload': f.payload_name,
        'Severity': f.severity,
        'Confidence': f.confidence,
        'Baseline Status': f.baseline.status,
        'Attack Status': f.attack.status,
        'Attack Latency (ms)': round(f.attack.latency * 1000, 1),
    } for f in report.findings]
    return pd.DataFrame(rows, columns=FINDING_COLUMNS)


def probe_frame(report: Report) -> pd.DataFrame:
    df = pd.DataFrame(sorted(report.probe_counts.items()), columns=['Endpoint', 'Probes'])
    df['Reachable'] = True
    if not report.unreachable:
        return df
    unreachable = pd.DataFrame({'Endpoint': report.unreachable, 'Probes': 0, 'Reachable': False})
    return pd.concat([df, unreachable], ignore_index=True)


def to_excel(df: pd.DataFrame) -> bytes:
    output = BytesIO()
    with pd.ExcelWriter(output, engine='xlsxwriter') as writer:
        df.to_excel(writer, sheet_name='Findings', index=False)
    return output.getvalue()
