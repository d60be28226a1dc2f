"""Streamlit page for running scans against a lab and browsing the findings.

    streamlit run dashboard.py
"""
import streamlit as st

import scanner
import utils
from constants import ATTACK_DESCRIPTIONS, LAB_WARNING, AttackClass
from settings import SettingsError, load_settings


def scan_UI():
    st.title('NoSQL Injection Lab')
    st.warning(LAB_WARNING)
    with st.expander("About"):
        st.write(
            """
            The scanner probes each endpoint with known-bad baselines first, then with the payload catalog for
            its kind of endpoint. A finding is reported when an attack succeeds where the baseline failed.

            Run it against the vulnerable lab (`/vuln/...` endpoints, REST in open mode) and against the hardened
            lab (`/safe/...` endpoints, REST in json-only mode). The hardened lab should report no findings.
            """
        )
        for attack_class in AttackClass:
            st.markdown(f'**{attack_class.value}**: {ATTACK_DESCRIPTIONS[attack_class]}')

    try:
        settings = load_settings()
    except SettingsError as e:
        st.error(str(e))
        st.stop()
    base_url = st.text_input('Lab base URL', f"http://{settings['service']['host']}:{settings['service']['port']}")
    target = st.radio('Endpoints to scan', ('Vulnerable', 'Hardened'), index=0)

    if not st.button('Run scan'):
        st.stop()

    config = scanner.lab_target_config(base_url, hardened=target == 'Hardened')
    try:
        with st.spinner('Scanning...'):
            report = scanner.scan(config, workers=settings['scanner']['workers'],
                                  timeout=settings['scanner']['probe_timeout'])
    except scanner.ScanError as e:
        st.error(str(e))
        st.stop()

    df = utils.findings_frame(report)
    col_1, col_2, col_3 = st.columns(3)
    col_1.metric('Findings', len(df))
    col_2.metric('Attack classes', len(scanner.classes_found(report)))
    col_3.metric('Duration (ms)', report.duration_ms)

    if df.empty:
        st.success('No findings: every probe was rejected or failed like its baseline.')
    else:
        st.dataframe(df)
    if report.unreachable:
        st.error('Unreachable endpoints: ' + ', '.join(report.unreachable))
    st.subheader('Probes per endpoint')
    st.dataframe(utils.probe_frame(report))

    st.download_button('Download findings', utils.to_excel(df), file_name='findings.xlsx')
    st.download_button('Download report JSON', scanner.render_report(report, 'json'), file_name='report.json')


if __name__ == '__main__':
    st.set_page_config(page_title="NoSQL Injection Lab", initial_sidebar_state="expanded")
    scan_UI()
